"""In-silico acquisition: bead phantoms, excitation blur and photon noise.

Images are plain float64 arrays of shape (side, side) holding fluorophore
density in photons per unit illumination.  Everything here is periodic: beads
wrap around the edges and the PSF is a circular convolution, which keeps the
total flux exact.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import (POISSON_GAUSSIAN_THRESHOLD, STREAM_ACQUIRE, STREAM_PHANTOM,
                     STREAM_RASTER, make_rng)
from .errors import ParameterError, SizeError
from .hadamard import SensingOperator, is_power_of_two
from .sampling import PatternSelection

NOISE_MODELS = ("none", "poisson")
FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))


def fwhm_to_sigma(fwhm):
    return fwhm * FWHM_TO_SIGMA


def as_image(x, name="image"):
    """Validate and return ``x`` as a square, power-of-two, nonnegative image."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != x.shape[1] or not is_power_of_two(x.shape[0]):
        raise SizeError(f"{name} must be square with a power-of-two side, got {x.shape}")
    if np.any(x < 0):
        raise ParameterError(f"{name} has negative values")
    return x


@dataclass(frozen=True)
class BeadPhantomSpec:
    side: int = 256
    n_beads: int = 50
    fwhm_px: float = 3.0
    total_flux: float = 6.4e3
    seed: int = 0

    def __post_init__(self):
        if not is_power_of_two(self.side):
            raise SizeError(f"side {self.side} is not a power of two")
        if self.n_beads < 1:
            raise ParameterError("n_beads must be at least 1")
        if not self.fwhm_px > 0:
            raise ParameterError("fwhm_px must be positive")
        if not self.total_flux > 0:
            raise ParameterError("total_flux must be positive")


@dataclass(frozen=True)
class PsfSpec:
    kind: str = "none"
    sigma_px: float = 1.0

    def __post_init__(self):
        if self.kind not in ("none", "gaussian"):
            raise ParameterError(f"unknown PSF kind {self.kind!r}")
        if self.kind == "gaussian" and not self.sigma_px > 0:
            raise ParameterError("sigma_px must be positive")


@dataclass(frozen=True)
class MeasurementSet:
    selection: PatternSelection
    values: np.ndarray
    illumination_scale: float = 1.0
    noise_model: str = "none"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.shape[0] != self.selection.m:
            raise SizeError(f"{values.shape[0]} values for {self.selection.m} patterns")
        if self.noise_model not in NOISE_MODELS:
            raise ParameterError(f"unknown noise model {self.noise_model!r}")
        if self.noise_model == "poisson" and (
                np.any(values < 0) or np.any(values != np.round(values))):
            raise ParameterError("Poisson measurements must be nonnegative integers")


def bead_centers(spec: BeadPhantomSpec):
    rng = make_rng(spec.seed, STREAM_PHANTOM)
    return rng.uniform(0.0, spec.side, size=(spec.n_beads, 2))


def gaussian_spots(side, centers, sigma, amplitudes=None):
    """Sum of periodic isotropic Gaussians at (row, col) ``centers``."""
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    if amplitudes is None:
        amplitudes = np.ones(len(centers))
    grid = np.arange(side, dtype=np.float64)
    img = np.zeros((side, side))
    for (cr, cc), amp in zip(centers, amplitudes):
        # minimum-image distance on the torus
        dr = (grid - cr + side / 2) % side - side / 2
        dc = (grid - cc + side / 2) % side - side / 2
        img += amp * np.outer(np.exp(-dr ** 2 / (2 * sigma ** 2)),
                              np.exp(-dc ** 2 / (2 * sigma ** 2)))
    return img


def make_bead_phantom(spec: BeadPhantomSpec, centers=None):
    """Bead image whose pixel sum equals ``spec.total_flux``.

    ``centers`` overrides the seeded random positions (rows of (row, col)).
    """
    if centers is None:
        centers = bead_centers(spec)
    img = gaussian_spots(spec.side, centers, fwhm_to_sigma(spec.fwhm_px))
    img *= spec.total_flux / img.sum()
    return img


def _circulant_gaussian(side, sigma):
    d = np.arange(side, dtype=np.float64)
    d = np.minimum(d, side - d)
    g = np.exp(-d ** 2 / (2 * sigma ** 2))
    g /= g.sum()
    idx = (np.arange(side)[:, None] - np.arange(side)[None, :]) % side
    return g[idx]


def apply_psf(x, psf: PsfSpec):
    """Periodic convolution of ``x`` with a normalized Gaussian PSF.

    Trailing axes beyond the first two (spectral channels) are blurred
    independently.
    """
    x = np.asarray(x, dtype=np.float64)
    if psf.kind == "none":
        return x
    if x.ndim < 2 or x.shape[0] != x.shape[1]:
        raise SizeError(f"expected a square image, got {x.shape}")
    # separable kernel as a circulant matrix: nonnegative products only,
    # so blurred densities never dip below zero
    c = _circulant_gaussian(x.shape[0], psf.sigma_px)
    if x.ndim == 2:
        return c @ x @ c.T
    return np.einsum("ij,jk...,lk->il...", c, x, c)


def poisson_counts(rng, means):
    """Poisson draws with a rounded-Gaussian branch above the config threshold."""
    means = np.asarray(means, dtype=np.float64)
    if np.any(means < 0) or not np.all(np.isfinite(means)):
        raise AssertionError("Poisson means must be finite and nonnegative")
    big = means > POISSON_GAUSSIAN_THRESHOLD
    if not big.any():
        return rng.poisson(means).astype(np.float64)
    out = np.empty_like(means)
    out[~big] = rng.poisson(means[~big])
    mu = means[big]
    out[big] = np.maximum(np.round(rng.normal(mu, np.sqrt(mu))), 0.0)
    return out


def acquire(x, op: SensingOperator, psf: PsfSpec = PsfSpec(), noise="poisson", seed=0):
    """Record one measurement per selected pattern of the blurred sample."""
    if noise not in NOISE_MODELS:
        raise ParameterError(f"unknown noise model {noise!r}")
    means = op.forward(apply_psf(x, psf))
    if noise == "none":
        values = means
    else:
        values = poisson_counts(make_rng(seed, STREAM_ACQUIRE), means)
    return MeasurementSet(op.selection, values, op.illumination_scale, noise)


def acquire_raster(x, lambda_rs, seed=0):
    """Raster-scan counts: independent Poisson(lambda_rs * x[i]) per pixel."""
    if not lambda_rs > 0:
        raise ParameterError("lambda_rs must be positive")
    x = np.asarray(x, dtype=np.float64)
    return poisson_counts(make_rng(seed, STREAM_RASTER), lambda_rs * x)


def make_spike_phantom(side, k_sparse, amplitude=1.0, seed=0):
    """``k_sparse`` pixels of height ``amplitude`` at seeded distinct positions."""
    if not is_power_of_two(side):
        raise SizeError(f"side {side} is not a power of two")
    if not 1 <= k_sparse <= side * side:
        raise ParameterError(f"need 1 <= K <= N, got K={k_sparse}")
    rng = make_rng(seed, STREAM_PHANTOM)
    img = np.zeros(side * side)
    img[rng.choice(side * side, size=k_sparse, replace=False)] = amplitude
    return img.reshape(side, side)
