"""Weighted-l1 reconstruction from partial Hadamard measurements.

Solves ::

    min_x  sum_p w_p |(W^T x)_p|  +  alpha/2 * ||y - Phi x||^2   (x >= 0 optional)

with a monotone FISTA (function-value restart) in a fixed variable metric.

Why a metric: shifted {0,1} patterns all see the image mean, so ``Phi^T Phi``
has one eigenvalue about ``m`` times larger than the rest, along the constant
image.  A plain 1/L step crawls along every other direction.  We step in the
metric ``M = beta * (I + kappa * P)`` where ``P`` projects each channel onto
its spatial mean; ``kappa`` comes from the exact curvature along the constant
image, ``beta`` from power iteration on ``M^-1 Phi^T Phi``.

The prox in that metric stays exact for orthonormal bases (Dirac, or a
wavelet without the sign constraint): it is a soft threshold shifted along
the mean direction, with the shift found by a safeguarded Newton search on a
monotone piecewise-linear scalar equation.  For the undecimated frame, and
for a wavelet combined with ``nonneg``, the prox is computed approximately by
a fixed number of accelerated projected-gradient steps on its dual, warm
started across outer iterations.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import config
from .config import STREAM_POWER_ITERATION, make_rng
from .errors import DataError, ParameterError, ValidationError
from .forward import MeasurementSet
from .hadamard import SensingOperator
from .sparsity import SparsityBasis, analyze_axes, coefficient_weights, synthesize_axes

log = logging.getLogger(__name__)

STEP_RULES = ("fixed_from_operator_norm", "backtracking")
ALPHA_RULES = ("median", "universal")


@dataclass(frozen=True)
class SolverConfig:
    """Solver knobs.

    ``alpha=None`` picks alpha from the data: ``alpha_rule="median"`` uses
    :func:`default_alpha`, ``"universal"`` uses :func:`universal_alpha`.
    """

    alpha: float | None = None
    alpha_rule: str = "median"
    max_iters: int = config.DEFAULT_MAX_ITERS
    rel_tol: float = config.DEFAULT_REL_TOL
    nonneg: bool = True
    step_rule: str = "fixed_from_operator_norm"
    inner_iters: int = config.DEFAULT_INNER_ITERS
    power_iters: int = config.DEFAULT_POWER_ITERS
    precondition: bool = True

    def __post_init__(self):
        if self.alpha is not None and not self.alpha > 0:
            raise ParameterError("alpha must be positive")
        if self.max_iters < 1:
            raise ParameterError("max_iters must be at least 1")
        if not self.rel_tol > 0:
            raise ParameterError("rel_tol must be positive")
        if self.alpha_rule not in ALPHA_RULES:
            raise ParameterError(f"unknown alpha rule {self.alpha_rule!r}")
        if self.step_rule not in STEP_RULES:
            raise ParameterError(f"unknown step rule {self.step_rule!r}")
        if self.inner_iters < 1 or self.power_iters < 1:
            raise ParameterError("iteration budgets must be positive")


@dataclass
class ReconResult:
    image: np.ndarray
    objective_trace: np.ndarray
    iterations_used: int
    residual_norm: float
    alpha: float
    converged: bool


def default_alpha(values) -> float:
    """``1 / (2 * median(y))``: inverse of twice the typical Poisson variance."""
    values = np.asarray(values, dtype=np.float64)
    level = float(np.median(values))
    if level <= 0:
        level = float(np.mean(np.abs(values)))
    if level <= 0:
        return 1.0
    return 1.0 / (2.0 * level)


def universal_alpha(values, op: SensingOperator) -> float:
    """Alpha whose unit-weight threshold equals ``sqrt(2 ln N)`` noise deviations.

    With Poisson variance ``sigma^2 ~ median(y)``, one gradient step spreads
    ``2 sigma sqrt(m) / (lambda N)`` of noise onto each pixel while the prox
    thresholds at ``4 / (alpha lambda^2 N)``; equating the two at the
    universal level gives ``alpha = 2 / (lambda tau sigma sqrt(m))``.
    """
    level = 1.0 / (2.0 * default_alpha(values))
    n = op.side * op.side
    tau = np.sqrt(2.0 * np.log(n))
    scale = op.illumination_scale if op.illumination_scale > 0 else 1.0
    return 2.0 / (scale * tau * np.sqrt(level * max(op.m, 1)))


def _spatial_mean(x):
    return x.mean(axis=(0, 1), keepdims=True)


def _power_iteration(apply_h, metric, shape, iters, seed=0):
    """Rayleigh quotients of ``M^-1 H``, which is self-adjoint in the M inner product.

    ``metric`` is None for the Euclidean case.  Returns the running maxima,
    nondecreasing lower bounds on the top eigenvalue.
    """
    rng = make_rng(seed, STREAM_POWER_ITERATION)
    v = rng.uniform(0.5, 1.5, size=shape)
    apply_m = (lambda a: a) if metric is None else metric.metric
    apply_minv = (lambda a: a) if metric is None else metric
    estimates = []
    for _ in range(iters):
        hv = apply_h(v)
        estimates.append(float(np.vdot(v, hv)) / float(np.vdot(v, apply_m(v))))
        z = apply_minv(hv)
        norm = np.sqrt(float(np.vdot(z, apply_m(z))))
        if norm == 0:
            break
        v = z / norm
    return np.maximum.accumulate(np.asarray(estimates))


class _Metric:
    """``M = beta * (I + kappa * P)`` with P the per-channel spatial mean."""

    def __init__(self, beta, kappa):
        self.beta = float(beta)
        self.kappa = float(kappa)

    def __call__(self, g):
        # M^-1 g
        out = g - (self.kappa / (1.0 + self.kappa)) * _spatial_mean(g)
        return out / self.beta

    def metric(self, v):
        return self.beta * (v + self.kappa * _spatial_mean(v))

    def sq_norm(self, d):
        n = d.shape[0] * d.shape[1]
        return self.beta * (float(np.vdot(d, d)) + self.kappa * n * float(np.sum(_spatial_mean(d) ** 2)))


def _shrink_soft(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def _shrink_nonneg(z, t):
    return np.maximum(z - t, 0.0)


def _shifted_shrink(v, t, q, kappa, shrink, delta0, tol=1e-13, max_steps=200):
    """Solve ``c = shrink(v - delta q)``, ``delta = kappa <q, c - v>`` per channel.

    ``phi(delta) = delta - kappa (<q, c(delta)> - <q, v>)`` is increasing and
    piecewise linear; Newton steps on the current piece, bracketed by
    bisection, terminate once the right piece is found.
    """
    qv = np.sum(q * v, axis=(0, 1))
    q2 = q * q
    delta = np.array(delta0, dtype=np.float64)
    lo = np.full_like(delta, -np.inf)
    hi = np.full_like(delta, np.inf)
    for _ in range(max_steps):
        c = shrink(v - delta * q, t)
        qc = np.sum(q * c, axis=(0, 1))
        phi = delta - kappa * (qc - qv)
        scale = np.abs(delta) + kappa * (np.abs(qc) + np.abs(qv)) + 1e-300
        done = np.abs(phi) <= tol * scale
        if done.all():
            break
        hi = np.where(phi > 0, np.minimum(hi, delta), hi)
        lo = np.where(phi < 0, np.maximum(lo, delta), lo)
        slope = 1.0 + kappa * np.sum(q2 * (c != 0), axis=(0, 1))
        step = delta - phi / slope
        inside = (step > lo) & (step < hi)
        bracketed = np.isfinite(lo) & np.isfinite(hi)
        new = np.where(inside | ~bracketed, step, 0.5 * (lo + hi))
        delta = np.where(done, delta, new)
    return c, delta


class _Problem:
    """One reconstruction: data (m, C), operator, transform over ``axes``."""

    def __init__(self, y, op: SensingOperator, basis: SparsityBasis, axes, n_channels,
                 cfg: SolverConfig, alpha):
        self.y = y
        self.op = op
        self.basis = basis
        self.axes = axes
        self.cfg = cfg
        self.alpha = float(alpha)
        self.shape = (op.side, op.side, n_channels)
        self.weights = coefficient_weights(basis, self.shape, axes)
        self.exact_prox = basis.orthonormal and (basis.kind == "dirac" or not cfg.nonneg)
        self.shrink = _shrink_nonneg if (cfg.nonneg and basis.kind == "dirac") else _shrink_soft
        # P in coefficient space: T P T^T c = q <q, c> per channel
        p = np.full((op.side, op.side, 1), 1.0 / op.side)
        spatial = set(axes) <= {0, 1}
        self.q = analyze_axes(p, basis, axes) if (spatial and basis.orthonormal) else p
        self.metric = self._build_metric()
        self._delta = np.zeros(n_channels)
        self._dual = None

    # -- operators -----------------------------------------------------------
    def forward(self, x):
        return self.op.forward(x)

    def gradient(self, ax):
        return self.alpha * self.op.adjoint(ax - self.y)

    def penalty(self, x):
        return float(np.sum(self.weights * np.abs(analyze_axes(x, self.basis, self.axes))))

    def smooth(self, ax):
        r = self.y - ax
        return 0.5 * self.alpha * float(np.vdot(r, r))

    def _hessian_single(self, v):
        return self.alpha * self.op.adjoint(self.op.forward(v))

    def _build_metric(self):
        side = self.op.side
        iters = self.cfg.power_iters
        if self.cfg.precondition:
            p = np.full((side, side, 1), 1.0 / side)
            curv_mean = float(np.vdot(p, self._hessian_single(p)))
            bulk = self.alpha * self.op.illumination_scale ** 2 * side * side / 4.0
            kappa = max(curv_mean / bulk - 1.0, 0.0) if bulk > 0 else 0.0
        else:
            kappa = 0.0
        unit = _Metric(1.0, kappa)
        est = _power_iteration(self._hessian_single, unit, (side, side, 1), iters)
        beta = est[-1] if est.size else 0.0
        if self.cfg.step_rule == "fixed_from_operator_norm":
            beta *= config.STEP_SAFETY
        if not beta > 0:
            beta = 1.0
        log.debug("metric beta=%.4g kappa=%.4g", beta, kappa)
        return _Metric(beta, kappa)

    # -- proximal step -------------------------------------------------------
    def prox(self, v):
        """Prox of the penalty in the current metric; returns (x, penalty)."""
        if self.exact_prox:
            return self._prox_exact(v)
        return self._prox_dual(v)

    def _prox_exact(self, v):
        cv = analyze_axes(v, self.basis, self.axes)
        t = self.weights / self.metric.beta
        if self.metric.kappa == 0:
            c = self.shrink(cv, t)
        else:
            c, self._delta = _shifted_shrink(cv, t, self.q, self.metric.kappa,
                                             self.shrink, self._delta)
        x = synthesize_axes(c, self.basis, self.axes)
        if self.cfg.nonneg:
            # the Dirac shrink is already nonnegative; this only clears -0.0
            x = np.maximum(x, 0.0)
        return x, float(np.sum(self.weights * np.abs(c)))

    def _prox_dual(self, v):
        minv = self.metric
        nonneg = self.cfg.nonneg
        w = self.weights
        if self._dual is None:
            cshape = analyze_axes(v, self.basis, self.axes).shape
            self._dual = (np.zeros(cshape), np.zeros(v.shape))
        u1, u2 = self._dual
        b1, b2 = u1, u2
        s = 1.0
        eta = minv.beta / (1.0 + (1.0 if nonneg else 0.0))

        def primal(a1, a2):
            back = synthesize_axes(a1, self.basis, self.axes)
            if nonneg:
                back = back + a2
            return v - minv(back)

        for _ in range(self.cfg.inner_iters):
            x = primal(b1, b2)
            n1 = np.clip(b1 + eta * analyze_axes(x, self.basis, self.axes), -w, w)
            n2 = np.minimum(b2 + eta * x, 0.0) if nonneg else b2
            s_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * s * s))
            mom = (s - 1.0) / s_next
            b1 = n1 + mom * (n1 - u1)
            b2 = n2 + mom * (n2 - u2)
            u1, u2, s = n1, n2, s_next
        self._dual = (u1, u2)
        x = primal(u1, u2)
        if nonneg:
            x = np.maximum(x, 0.0)
        return x, self.penalty(x)

    # -- main loop -----------------------------------------------------------
    def solve(self):
        cfg = self.cfg
        x = np.zeros(self.shape)
        ax = self.forward(x)
        f_x = self.penalty(x) + self.smooth(ax)
        yk, ayk = x, ax
        t = 1.0
        trace = []
        converged = False
        it = 0
        for it in range(1, cfg.max_iters + 1):
            grad = self.gradient(ayk)
            while True:
                z, pen_z = self.prox(yk - self.metric(grad))
                az = self.forward(z)
                smooth_z = self.smooth(az)
                if cfg.step_rule != "backtracking":
                    break
                d = z - yk
                bound = self.smooth(ayk) + float(np.vdot(grad, d)) + 0.5 * self.metric.sq_norm(d)
                if smooth_z <= bound * (1 + 1e-12) + 1e-300:
                    break
                self.metric = _Metric(2.0 * self.metric.beta, self.metric.kappa)
                self._dual = None
            f_z = pen_z + smooth_z
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            if f_z <= f_x:
                change = (f_x - f_z) / max(abs(f_z), 1e-300)
                mom = (t - 1.0) / t_next
                yk = z + mom * (z - x)
                ayk = az + mom * (az - ax)
                x, ax, f_x = z, az, f_z
                t = t_next
                trace.append(f_x)
                if change < cfg.rel_tol and it > 1:
                    converged = True
                    break
            else:
                # function-value restart: drop momentum, keep the best point
                yk, ayk = x, ax
                t = 1.0
                trace.append(f_x)
        return x, ax, np.asarray(trace), it, converged


def _check_measurements(meas: MeasurementSet, op: SensingOperator):
    if tuple(meas.selection.indices) != tuple(op.selection.indices):
        raise ValidationError("measurement selection does not match the operator's")
    if not np.all(np.isfinite(meas.values)):
        raise DataError("measurements contain non-finite values")


def solve_channels(values, op: SensingOperator, basis: SparsityBasis, axes, cfg: SolverConfig):
    """Reconstruct a (side, side, C) array from (m, C) measurements."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if cfg.alpha is not None:
        alpha = cfg.alpha
    elif cfg.alpha_rule == "universal":
        alpha = universal_alpha(values, op)
    else:
        alpha = default_alpha(values)
    prob = _Problem(values, op, basis, axes, values.shape[1], cfg, alpha)
    x, ax, trace, iters, converged = prob.solve()
    resid = float(np.linalg.norm(values - ax))
    return ReconResult(x, trace, iters, resid, alpha, converged)


def reconstruct(meas: MeasurementSet, op: SensingOperator, basis: SparsityBasis = SparsityBasis(),
                cfg: SolverConfig = SolverConfig()) -> ReconResult:
    """Weighted-l1 reconstruction of a 2D image."""
    _check_measurements(meas, op)
    res = solve_channels(meas.values, op, basis, (0, 1), cfg)
    res.image = res.image[:, :, 0]
    return res


def operator_norm_estimate(op: SensingOperator, basis: SparsityBasis = SparsityBasis(), iters=30):
    """Power-iteration lower bound on ``||Phi W||^2``, one value per iteration.

    ``W`` is orthonormal or a Parseval frame used in analysis form, so it does
    not change the norm; ``basis`` is accepted for interface symmetry.  The
    returned array is nondecreasing; its last entry is the estimate.
    """
    if iters < 1:
        raise ParameterError("iters must be at least 1")
    shape = (op.side, op.side, 1)
    return _power_iteration(lambda v: op.adjoint(op.forward(v)), None, shape, iters)


def alpha_from_epsilon(meas: MeasurementSet, op: SensingOperator, basis: SparsityBasis,
                       epsilon, cfg: SolverConfig = SolverConfig(), rel_band=0.05,
                       max_probes=60, axes=(0, 1)):
    """Regularization weight whose solution has ``||y - Phi x|| ~= epsilon``.

    Geometric bisection on alpha with a full solve per probe; the residual of
    the penalized solution decreases as alpha grows.  Succeeds when the
    residual is within ``rel_band`` of ``epsilon``.  ``axes=(2,)`` searches
    for a cube with a spectral transform, as in joint hyperspectral solves.
    """
    _check_measurements(meas, op)
    ynorm = float(np.linalg.norm(meas.values))
    if not 0 < epsilon < ynorm:
        raise ParameterError(f"epsilon must lie in (0, ||y||) = (0, {ynorm:.6g})")

    def residual(a):
        return solve_channels(meas.values, op, basis, axes, replace(cfg, alpha=a)).residual_norm

    a = default_alpha(meas.values)
    r = residual(a)
    probes = 1
    lo = hi = None  # alpha with residual above / below epsilon
    while abs(r - epsilon) > rel_band * epsilon:
        if probes >= max_probes:
            raise ParameterError(
                f"no alpha reached residual {epsilon:.6g} within {max_probes} solves")
        if r > epsilon:
            lo = a
        else:
            hi = a
        if lo is None:
            a = hi / 10.0
        elif hi is None:
            a = lo * 10.0
        else:
            a = float(np.sqrt(lo * hi))
        r = residual(a)
        probes += 1
    log.debug("alpha_from_epsilon: alpha=%.4g after %d solves", a, probes)
    return a


def poisson_epsilon(values) -> float:
    """Expected residual norm under Poisson noise, ``sqrt(sum(y))``."""
    return float(np.sqrt(np.sum(np.clip(values, 0.0, None))))
