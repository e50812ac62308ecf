"""Image quality and noise analysis for raster and Hadamard acquisition."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import STREAM_MONTE_CARLO, make_rng
from .errors import DegenerateRangeError, ParameterError, SizeError
from .forward import (BeadPhantomSpec, MeasurementSet, acquire, make_bead_phantom,
                      make_spike_phantom, poisson_counts)
from .hadamard import HadamardIndexer, SensingOperator, fwht, fwht_2d
from .sampling import m_from_ratio, select_full, select_random
from .solver import SolverConfig, reconstruct
from .sparsity import SparsityBasis


def psnr(x_hat, x_ref) -> float:
    """``10 log10(d^2 / MSE)`` with ``d`` the dynamic range of ``x_ref``.

    Returns ``math.inf`` when the images are identical.
    """
    x_hat = np.asarray(x_hat, dtype=np.float64)
    x_ref = np.asarray(x_ref, dtype=np.float64)
    if x_hat.shape != x_ref.shape:
        raise SizeError(f"shape mismatch {x_hat.shape} vs {x_ref.shape}")
    d = float(x_ref.max() - x_ref.min())
    if d == 0:
        raise DegenerateRangeError("reference image is constant")
    mse = float(np.mean((x_hat - x_ref) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(d * d / mse)


def mse_rs_theory(x, lambda_rs) -> float:
    """Per-pixel raster-scan MSE, ``mean(x) / lambda_rs``."""
    if not lambda_rs > 0:
        raise ParameterError("lambda_rs must be positive")
    return float(np.mean(x)) / lambda_rs


def rs_mse_monte_carlo(x, lambda_rs, n_trials, seed=0, chunk=2048) -> float:
    """Empirical raster-scan MSE of ``counts / lambda_rs`` over many scans."""
    x = np.asarray(x, dtype=np.float64)
    rng = make_rng(seed, STREAM_MONTE_CARLO)
    total = 0.0
    done = 0
    while done < n_trials:
        b = min(chunk, n_trials - done)
        counts = poisson_counts(rng, np.broadcast_to(lambda_rs * x, (b,) + x.shape))
        total += float(np.sum((counts / lambda_rs - x) ** 2))
        done += b
    return total / (n_trials * x.size)


def _natural_grid(values, sel_indices, side):
    grid = np.empty(values.shape[:-1] + (side * side,))
    grid[..., np.asarray(sel_indices)] = values
    return grid.reshape(values.shape[:-1] + (side, side))


def hadamard_pseudo_inverse_estimate(meas: MeasurementSet, indexer: HadamardIndexer | None = None):
    """Exact inverse of full binary Hadamard sampling, applied matrix-free.

    ``S^-1 = (2/N) (H - (N/2) e1 e1^T)``: one 2D transform, then a correction
    on the pixel shared by every pattern, pixel (0, 0).
    """
    sel = meas.selection
    side = int(round(math.isqrt(sel.n_total)))
    if indexer is None:
        indexer = HadamardIndexer(side)
    if indexer.ordering != "natural":
        raise ParameterError("the closed-form inverse needs natural ordering")
    if sel.m != sel.n_total:
        raise ParameterError(f"need all {sel.n_total} patterns, got {sel.m}")
    if not meas.illumination_scale > 0:
        raise ParameterError("illumination scale must be positive")
    grid = _natural_grid(np.asarray(meas.values, dtype=np.float64), sel.indices, side)
    return _inverse_grid(grid, meas.illumination_scale)


def _inverse_grid(grid, scale):
    # grid[..., r, c] holds y_k for k = r * side + c
    n = grid.shape[-1] * grid.shape[-2]
    est = fwht(fwht(grid, axis=-1), axis=-2) * (2.0 / n)
    est[..., 0, 0] -= grid[..., 0, 0]
    return est / scale


def pseudo_inverse_dense(n):
    """Dense ``S^-1`` for N = n (a power of four for square patterns)."""
    side = math.isqrt(n)
    if side * side != n:
        raise SizeError(f"N={n} is not a square")
    h1 = np.array([[1.0]])
    while h1.shape[0] < side:
        h1 = np.block([[h1, h1], [h1, -h1]])
    h = np.kron(h1, h1)
    e = np.zeros((n, n))
    e[0, 0] = n / 2
    return (2.0 / n) * (h - e)


@dataclass(frozen=True)
class NoiseStudyConfig:
    n_trials: int = 100_000
    lambda_cs: float = 1.0
    lambda_rs: float = 1.0
    special_pixel_zero: bool = True
    background_offset: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_trials < 1:
            raise ParameterError("n_trials must be at least 1")
        if not (self.lambda_cs > 0 and self.lambda_rs > 0):
            raise ParameterError("illumination scales must be positive")
        if not self.background_offset >= 0:
            raise ParameterError("background_offset must be nonnegative")


def variance_theory(x, lambda_cs=1.0, background=0.0):
    """Per-pixel variance of the full-sampling inverse under Poisson noise."""
    x = np.asarray(x, dtype=np.float64) + background
    n = x.size
    mean = float(x.mean())
    special = float(x[0, 0])
    out = np.full(x.shape, 2.0 * mean + 2.0 * special / n)
    out[0, 0] = (n - 2.0) * mean + 2.0 * special / n
    return out / lambda_cs


@dataclass
class VarianceStudy:
    empirical: np.ndarray
    theory: np.ndarray
    mean: np.ndarray
    n_trials: int

    def relative_error(self):
        return np.abs(self.empirical - self.theory) / self.theory

    def passes(self, tol=0.05) -> bool:
        return bool(np.all(self.relative_error() <= tol))


def study_image(x, cfg: NoiseStudyConfig):
    """Sample actually measured in a study: dark special pixel, plus background."""
    x = np.array(x, dtype=np.float64)
    if cfg.special_pixel_zero:
        x[0, 0] = 0.0
    return x + cfg.background_offset


def variance_study(x, cfg: NoiseStudyConfig = NoiseStudyConfig(), chunk=4096) -> VarianceStudy:
    """Monte Carlo variance of the full-sampling Hadamard inverse, per pixel.

    Each trial draws Poisson counts for all N patterns and inverts them in
    closed form.  Chunk moments are merged with the pairwise update of Chan
    et al., so the result does not depend on the chunk size beyond roundoff.
    """
    x = study_image(x, cfg)
    side = x.shape[0]
    op = SensingOperator(HadamardIndexer(side), select_full(side * side), cfg.lambda_cs)
    means = op.forward(x)
    rng = make_rng(cfg.seed, STREAM_MONTE_CARLO)
    count = 0
    mean = np.zeros(x.shape)
    m2 = np.zeros(x.shape)
    while count < cfg.n_trials:
        b = min(chunk, cfg.n_trials - count)
        y = poisson_counts(rng, np.broadcast_to(means, (b, means.size)))
        est = _inverse_grid(y.reshape(b, side, side), cfg.lambda_cs)
        c_mean = est.mean(axis=0)
        c_m2 = np.sum((est - c_mean) ** 2, axis=0)
        delta = c_mean - mean
        tot = count + b
        mean = mean + delta * (b / tot)
        m2 = m2 + c_m2 + delta ** 2 * (count * b / tot)
        count = tot
    empirical = m2 / max(count - 1, 1)
    # theory of the measured sample; the background is already folded into x
    return VarianceStudy(empirical, variance_theory(x, cfg.lambda_cs), mean, count)


def mse_cs_sparse_theory(k_sparse, m, n, lambda_cs, x_bar, c0=2.0) -> float:
    """``c0 * (K / M) * x_bar / lambda_cs``; ``m = n, c0 = 2`` is full sampling."""
    if not 1 <= k_sparse <= m <= n:
        raise ParameterError(f"need 1 <= K <= M <= N, got K={k_sparse} M={m} N={n}")
    if not lambda_cs > 0:
        raise ParameterError("lambda_cs must be positive")
    return c0 * (k_sparse / m) * x_bar / lambda_cs


def cs_mse_study(side, k_sparse, ratios, seeds, amplitude=1.0, lambda_cs=1.0,
                 cfg: SolverConfig = SolverConfig(), basis: SparsityBasis = SparsityBasis()):
    """Reconstruction MSE of Poisson-noisy spike phantoms at several ratios.

    Returns ``{ratio: array of per-seed MSE}``; the phantom, pattern draw and
    noise all follow the seed, so ratios are compared on identical samples.
    """
    n = side * side
    out = {}
    for ratio in ratios:
        m = m_from_ratio(n, ratio)
        errs = []
        for seed in seeds:
            x = make_spike_phantom(side, k_sparse, amplitude, seed)
            op = SensingOperator(HadamardIndexer(side), select_random(n, m, seed), lambda_cs)
            meas = acquire(x, op, noise="poisson", seed=seed)
            x_hat = reconstruct(meas, op, basis, cfg).image
            errs.append(float(np.mean((x_hat - x) ** 2)))
        out[ratio] = np.asarray(errs)
    return out


def fitted_c0(mse, k_sparse, m, lambda_cs, x_bar) -> float:
    """Constant that makes the sparse-CS MSE law reproduce ``mse``."""
    return mse / mse_cs_sparse_theory(k_sparse, m, max(m, k_sparse), lambda_cs, x_bar, 1.0)


def dc_offset_decomposition(x, k, indexer: HadamardIndexer | None = None):
    """Split the unit-illumination measurement of pattern ``k`` into DC and AC parts.

    Returns ``(N * mean(x) / 2, <h_k, x> / 2)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if indexer is None:
        indexer = HadamardIndexer(x.shape[0])
    r, c = indexer.decode(int(k))
    return 0.5 * float(x.sum()), 0.5 * float(fwht_2d(x)[r, c])


def psnr_sweep(phantom: BeadPhantomSpec, ratios, scales, seeds,
               basis: SparsityBasis = SparsityBasis(), cfg: SolverConfig = SolverConfig(),
               reference=None, progress=None):
    """PSNR of sparse reconstructions over undersampling ratio and illumination.

    Each seed fixes the pattern draw and the noise; the phantom itself is
    fixed by ``phantom.seed``.  PSNR is computed against ``reference``
    (ground truth by default).  Returns rows ``(ratio, scale, psnr, seed)``.
    """
    x = make_bead_phantom(phantom)
    ref = x if reference is None else reference
    n = phantom.side ** 2
    indexer = HadamardIndexer(phantom.side)
    rows = []
    for ratio in ratios:
        m = m_from_ratio(n, ratio)
        for scale in scales:
            for seed in seeds:
                op = SensingOperator(indexer, select_random(n, m, seed), scale)
                meas = acquire(x, op, noise="poisson", seed=seed)
                x_hat = reconstruct(meas, op, basis, cfg).image
                rows.append((float(ratio), float(scale), psnr(x_hat, ref), int(seed)))
                if progress is not None:
                    progress(rows[-1])
    return rows


def median_psnr(rows):
    """``{(ratio, scale): median PSNR}`` from sweep rows."""
    groups = {}
    for ratio, scale, value, _ in rows:
        groups.setdefault((ratio, scale), []).append(value)
    return {key: float(np.median(v)) for key, v in groups.items()}
