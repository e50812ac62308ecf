"""Spectrally resolved acquisition and joint space-spectrum reconstruction.

Every pattern is recorded by a spectrometer, so a measurement becomes a
length-``n_lambda`` vector.  A cube is stored as (row, col, channel).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import STREAM_ACQUIRE, STREAM_PHANTOM, make_rng
from .errors import DegenerateSpectrumError, EmptyBandError, ParameterError, SizeError
from .forward import (NOISE_MODELS, MeasurementSet, PsfSpec, apply_psf, fwhm_to_sigma,
                      gaussian_spots, poisson_counts)
from .hadamard import SensingOperator, is_power_of_two
from .solver import SolverConfig, _check_measurements, solve_channels
from .sparsity import SparsityBasis


@dataclass(frozen=True)
class HyperCube:
    values: np.ndarray
    lambda_axis: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        axis = np.asarray(self.lambda_axis, dtype=np.float64)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "lambda_axis", axis)
        if values.ndim != 3 or values.shape[0] != values.shape[1]:
            raise SizeError(f"cube must be (side, side, n_lambda), got {values.shape}")
        if not is_power_of_two(values.shape[0]) or not is_power_of_two(values.shape[2]):
            raise SizeError(f"cube dimensions must be powers of two, got {values.shape}")
        if np.any(values < 0):
            raise ParameterError("cube has negative values")
        if axis.shape != (values.shape[2],) or np.any(np.diff(axis) <= 0):
            raise ParameterError("lambda_axis must be strictly increasing, one per channel")

    @property
    def side(self) -> int:
        return self.values.shape[0]

    @property
    def n_lambda(self) -> int:
        return self.values.shape[2]


def linear_axis(start_nm, step_nm, n):
    return start_nm + step_nm * np.arange(n, dtype=np.float64)


@dataclass(frozen=True)
class BandSpec:
    """Named half-open wavelength intervals ``[lo, hi)`` in nm."""

    bands: tuple

    def __post_init__(self):
        bands = tuple((str(n), float(lo), float(hi)) for n, lo, hi in self.bands)
        object.__setattr__(self, "bands", bands)
        for name, lo, hi in bands:
            if not lo < hi:
                raise ParameterError(f"band {name!r} has lambda_min >= lambda_max")
        ordered = sorted(bands, key=lambda b: b[1])
        for (n1, _, hi1), (n2, lo2, _) in zip(ordered, ordered[1:]):
            if lo2 < hi1:
                raise ParameterError(f"bands {n1!r} and {n2!r} overlap")


RGB_BANDS = BandSpec((("blue", 500.0, 530.0), ("green", 530.0, 560.0), ("red", 560.0, 630.0)))


def _check_cube_side(cube: HyperCube, op: SensingOperator):
    if cube.side != op.side:
        raise SizeError(f"cube side {cube.side} does not match pattern side {op.side}")


def hyper_acquire(cube: HyperCube, op: SensingOperator, noise="poisson", seed=0,
                  psf: PsfSpec = PsfSpec(), rejection_nm=None) -> MeasurementSet:
    """Record a spectrum per selected pattern.

    Returns one :class:`MeasurementSet` whose ``values`` have shape
    (m, n_lambda); column ``l`` holds the counts of channel ``l``.
    ``rejection_nm=(lo, hi)`` zeroes the means of channels with wavelength in
    ``[lo, hi)``, mimicking a dichroic stop band.
    """
    _check_cube_side(cube, op)
    if noise not in NOISE_MODELS:
        raise ParameterError(f"unknown noise model {noise!r}")
    means = op.forward(apply_psf(cube.values, psf))
    if rejection_nm is not None:
        lo, hi = rejection_nm
        means[:, (cube.lambda_axis >= lo) & (cube.lambda_axis < hi)] = 0.0
    if noise == "none":
        values = means
    else:
        # same stream as 2D acquisition, so one channel reproduces it exactly
        values = poisson_counts(make_rng(seed, STREAM_ACQUIRE), means)
    return MeasurementSet(op.selection, values, op.illumination_scale, noise)


def hyper_solve(meas: MeasurementSet, op: SensingOperator,
                spectral_basis: SparsityBasis = SparsityBasis(kind="wavelet_orthonormal"),
                cfg: SolverConfig = SolverConfig()):
    """Joint solve with Dirac in space and ``spectral_basis`` along channels.

    Returns the raw :class:`~cfm.solver.ReconResult` whose ``image`` is the
    (side, side, n_lambda) array.
    """
    _check_measurements(meas, op)
    values = meas.values if meas.values.ndim == 2 else meas.values[:, None]
    if not is_power_of_two(values.shape[1]):
        raise SizeError(f"channel count {values.shape[1]} is not a power of two")
    return solve_channels(values, op, spectral_basis, (2,), cfg)


def hyper_reconstruct(meas: MeasurementSet, op: SensingOperator,
                      spectral_basis: SparsityBasis = SparsityBasis(kind="wavelet_orthonormal"),
                      cfg: SolverConfig = SolverConfig(), lambda_axis=None) -> HyperCube:
    """Reconstructed cube; see :func:`hyper_solve` for the solver diagnostics."""
    res = hyper_solve(meas, op, spectral_basis, cfg)
    n_lambda = res.image.shape[2]
    if lambda_axis is None:
        lambda_axis = np.arange(n_lambda, dtype=np.float64)
    # a cube holds densities, so an unconstrained solution is clipped
    return HyperCube(np.maximum(res.image, 0.0), lambda_axis)


def pool_bands(cube: HyperCube, bands: BandSpec = RGB_BANDS):
    """Per-band images: sum of channels with wavelength in ``[lo, hi)``."""
    out = {}
    for name, lo, hi in bands.bands:
        sel = (cube.lambda_axis >= lo) & (cube.lambda_axis < hi)
        if not sel.any():
            raise EmptyBandError(f"band {name!r} [{lo}, {hi}) holds no channel")
        out[name] = cube.values[:, :, sel].sum(axis=2)
    return out


def disk_mask(side, row, col, radius_px):
    """Boolean periodic disk of integer ``radius_px`` around (row, col)."""
    if radius_px < 0:
        raise ParameterError("radius must be nonnegative")
    if 2 * radius_px + 1 > side:
        raise ParameterError(f"radius {radius_px} does not fit a {side}-pixel grid")
    grid = np.arange(side)
    dr = (grid - row + side // 2) % side - side // 2
    dc = (grid - col + side // 2) % side - side // 2
    return dr[:, None] ** 2 + dc[None, :] ** 2 <= radius_px ** 2


def extract_spectrum(cube: HyperCube, row, col, radius_px=0):
    """Disk-summed spectrum around (row, col), scaled so its maximum is 1."""
    if not (0 <= row < cube.side and 0 <= col < cube.side):
        raise ParameterError(f"pixel ({row}, {col}) outside the cube")
    mask = disk_mask(cube.side, row, col, radius_px)
    spec = cube.values[mask].sum(axis=0)
    peak = spec.max()
    if not peak > 0:
        raise DegenerateSpectrumError(f"no signal around ({row}, {col})")
    return spec / peak


@dataclass(frozen=True)
class SpectralPhantomSpec:
    side: int = 64
    n_beads: int = 10
    n_lambda: int = 16
    fwhm_px: float = 3.0
    total_flux: float = 1.6e4
    lambda_start_nm: float = 520.0
    lambda_step_nm: float = 7.5
    seed: int = 0

    def __post_init__(self):
        if not is_power_of_two(self.side) or not is_power_of_two(self.n_lambda):
            raise SizeError("side and n_lambda must be powers of two")
        if self.n_beads < 1 or not self.total_flux > 0 or not self.fwhm_px > 0:
            raise ParameterError("need n_beads >= 1 and positive flux and FWHM")


# (peak nm, width nm) of three smooth emission profiles
SPECTRA_NM = ((530.0, 12.0), (565.0, 15.0), (605.0, 18.0))


def emission_spectrum(lambda_axis, peak_nm, width_nm):
    return np.exp(-0.5 * ((np.asarray(lambda_axis) - peak_nm) / width_nm) ** 2)


@dataclass
class SpectralPhantom:
    cube: HyperCube
    centers: np.ndarray
    labels: np.ndarray
    spectra: np.ndarray


def make_spectral_phantom(spec: SpectralPhantomSpec) -> SpectralPhantom:
    """Beads cycling through three emission spectra; total flux ``spec.total_flux``."""
    rng = make_rng(spec.seed, STREAM_PHANTOM)
    centers = rng.uniform(0.0, spec.side, size=(spec.n_beads, 2))
    axis = linear_axis(spec.lambda_start_nm, spec.lambda_step_nm, spec.n_lambda)
    spectra = np.stack([emission_spectrum(axis, p, w) for p, w in SPECTRA_NM])
    labels = np.arange(spec.n_beads) % len(SPECTRA_NM)
    sigma = fwhm_to_sigma(spec.fwhm_px)
    cube = np.zeros((spec.side, spec.side, spec.n_lambda))
    for label in range(len(SPECTRA_NM)):
        pts = centers[labels == label]
        if len(pts):
            cube += gaussian_spots(spec.side, pts, sigma)[:, :, None] * spectra[label]
    cube *= spec.total_flux / cube.sum()
    return SpectralPhantom(HyperCube(cube, axis), centers, labels, spectra)
