from dataclasses import replace

import numpy as np
import pytest

from cfm import (BeadPhantomSpec, DataError, HadamardIndexer, MeasurementSet, ParameterError, SensingOperator,
                 SolverConfig, SparsityBasis, ValidationError, acquire, alpha_from_epsilon,
                 default_alpha, make_bead_phantom, make_spike_phantom, operator_norm_estimate,
                 pattern_2d, reconstruct, analyze)
from cfm.sampling import select_full, select_random
from cfm.solver import poisson_epsilon, universal_alpha

WAVELET = SparsityBasis("wavelet_orthonormal", "haar", 2)


def _dense_phi(op):
    ix = op.indexer
    return op.illumination_scale * np.array([pattern_2d(k, ix).ravel() for k in op.selection.indices])


def _objective(x, y, op, alpha, basis=SparsityBasis()):
    return np.abs(analyze(x, basis)).sum() + 0.5 * alpha * np.sum((y - op.forward(x)) ** 2)


def _problem(side=16, ratio=4, seed=0, noise="poisson", flux=400.0):
    x = make_bead_phantom(BeadPhantomSpec(side=side, n_beads=4, total_flux=flux, seed=seed))
    n = side * side
    op = SensingOperator(HadamardIndexer(side), select_random(n, n // ratio, seed), 1.0)
    return x, op, acquire(x, op, noise=noise, seed=seed)


def test_full_sampling_large_alpha_recovers_image(rng):
    x = rng.random((16, 16))
    op = SensingOperator(HadamardIndexer(16), select_full(256), 1.0)
    meas = acquire(x, op, noise="none")
    res = reconstruct(meas, op, SparsityBasis(), SolverConfig(alpha=1e9, rel_tol=1e-14,
                                                              max_iters=5000))
    assert np.linalg.norm(res.image - x) / np.linalg.norm(x) < 1e-6


@pytest.mark.parametrize("basis", [SparsityBasis(), WAVELET])
def test_zero_data_gives_zero_image(basis):
    op = SensingOperator(HadamardIndexer(16), select_random(256, 64, 1), 1.0)
    meas = MeasurementSet(op.selection, np.zeros(64))
    res = reconstruct(meas, op, basis, SolverConfig(alpha=1.0))
    assert np.all(res.image == 0)


def test_noiseless_spikes_small_scale():
    x = make_spike_phantom(32, 5, 1.0, seed=2)
    op = SensingOperator(HadamardIndexer(32), select_random(1024, 400, 2), 1.0)
    meas = acquire(x, op, noise="none")
    res = reconstruct(meas, op, SparsityBasis(), SolverConfig(alpha=300, rel_tol=1e-10,
                                                              max_iters=5000))
    assert np.linalg.norm(res.image - x) / np.linalg.norm(x) < 1e-3
    assert set(np.flatnonzero(res.image > 0.5)) == set(np.flatnonzero(x))


def test_subgradient_optimality_dirac_nonneg():
    x, op, meas = _problem()
    alpha = 0.05
    res = reconstruct(meas, op, SparsityBasis(), SolverConfig(alpha=alpha, rel_tol=1e-13,
                                                              max_iters=20000))
    xh = res.image
    g = alpha * op.adjoint(op.forward(xh) - meas.values)  # gradient of the fit term
    on = xh > 1e-9
    # x > 0: 1 + g = 0; x = 0: 1 + g >= 0
    assert np.max(np.abs(1 + g[on])) < 1e-3
    assert np.min(1 + g[~on]) > -1e-3


def test_subgradient_optimality_wavelet_signed():
    x, op, meas = _problem(seed=3)
    alpha = 0.05
    cfg = SolverConfig(alpha=alpha, nonneg=False, rel_tol=1e-13, max_iters=20000)
    res = reconstruct(meas, op, WAVELET, cfg)
    c = analyze(res.image, WAVELET)
    grad = analyze(alpha * op.adjoint(op.forward(res.image) - meas.values), WAVELET)
    on = np.abs(c) > 1e-9
    assert np.max(np.abs(grad[on] + np.sign(c[on]))) < 1e-3
    assert np.max(np.abs(grad[~on])) < 1 + 1e-3


@pytest.mark.parametrize("basis,nonneg", [
    (SparsityBasis(), True), (WAVELET, True), (WAVELET, False),
    (SparsityBasis("wavelet_undecimated", "haar", 1), True)])
def test_trace_monotone_and_nonneg(basis, nonneg):
    _, op, meas = _problem(seed=1)
    res = reconstruct(meas, op, basis, SolverConfig(nonneg=nonneg, max_iters=300))
    tr = res.objective_trace
    assert len(tr) == res.iterations_used
    assert np.all(np.diff(tr) <= 1e-12 * np.abs(tr[:-1]))
    if nonneg:
        assert res.image.min() >= 0
    assert res.residual_norm == pytest.approx(np.linalg.norm(meas.values - op.forward(res.image)),
                                              rel=1e-8)


def test_deterministic():
    _, op, meas = _problem(seed=4)
    a = reconstruct(meas, op, WAVELET)
    b = reconstruct(meas, op, WAVELET)
    np.testing.assert_array_equal(a.image, b.image)
    np.testing.assert_array_equal(a.objective_trace, b.objective_trace)


def test_preconditioning_and_step_rules_agree():
    _, op, meas = _problem(seed=5)
    base = SolverConfig(alpha=0.05, rel_tol=1e-12, max_iters=20000)
    objs = []
    for cfg in (base, replace(base, precondition=False),
                replace(base, step_rule="backtracking")):
        res = reconstruct(meas, op, SparsityBasis(), cfg)
        objs.append(_objective(res.image, meas.values, op, 0.05))
    assert max(objs) - min(objs) <= 1e-5 * min(objs)


def test_reported_alpha_follows_rule():
    _, op, meas = _problem(seed=6)
    assert reconstruct(meas, op, cfg=SolverConfig(max_iters=5)).alpha == default_alpha(meas.values)
    res = reconstruct(meas, op, cfg=SolverConfig(alpha_rule="universal", max_iters=5))
    assert res.alpha == universal_alpha(meas.values, op)
    assert default_alpha([4.0, 5.0, 6.0]) == 0.1


def test_input_validation():
    _, op, meas = _problem()
    other = SensingOperator(HadamardIndexer(16), select_random(256, 64, 99), 1.0)
    with pytest.raises(ValidationError):
        reconstruct(meas, other)
    bad = MeasurementSet(meas.selection, np.where(np.arange(meas.selection.m) == 3, np.nan,
                                                  meas.values))
    with pytest.raises(DataError):
        reconstruct(bad, op)
    with pytest.raises(ParameterError):
        SolverConfig(alpha=-1)
    with pytest.raises(ParameterError):
        SolverConfig(max_iters=0)
    with pytest.raises(ParameterError):
        SolverConfig(rel_tol=0)


def test_operator_norm_full_sampling_matches_dense():
    op = SensingOperator(HadamardIndexer(4), select_full(16), 1.0)
    dense = np.linalg.eigvalsh(_dense_phi(op).T @ _dense_phi(op)).max()
    est = operator_norm_estimate(op, iters=30)
    assert est[-1] == pytest.approx(dense, rel=0.01)
    assert est[-1] <= dense * (1 + 1e-12)
    assert np.all(np.diff(est) >= 0)


@pytest.mark.parametrize("scale", [1.0, 2.5])
def test_operator_norm_single_dc_pattern(scale):
    op = SensingOperator(HadamardIndexer(4), select_random(16, 1, 0), scale)
    dense = np.linalg.eigvalsh(_dense_phi(op).T @ _dense_phi(op)).max()
    assert dense == pytest.approx(16 * scale ** 2)
    assert operator_norm_estimate(op, iters=10)[-1] == pytest.approx(dense, rel=1e-6)


def test_alpha_from_epsilon_self_consistent_and_monotone():
    _, op, meas = _problem(side=16, seed=7, flux=2000.0)
    cfg = SolverConfig(max_iters=400)
    eps = poisson_epsilon(meas.values)
    a1 = alpha_from_epsilon(meas, op, SparsityBasis(), eps, cfg)
    res = reconstruct(meas, op, SparsityBasis(), replace(cfg, alpha=a1))
    assert abs(res.residual_norm - eps) <= 0.05 * eps
    a2 = alpha_from_epsilon(meas, op, SparsityBasis(), 2 * eps, cfg)
    assert a2 < a1


def test_alpha_from_epsilon_tight_fit_needs_large_alpha():
    _, op, meas = _problem(side=16, seed=8, flux=2000.0)
    cfg = SolverConfig(max_iters=400)
    loose = alpha_from_epsilon(meas, op, SparsityBasis(), 0.5 * np.linalg.norm(meas.values), cfg)
    tight = alpha_from_epsilon(meas, op, SparsityBasis(), 0.5 * poisson_epsilon(meas.values), cfg)
    assert tight > 10 * loose


def test_alpha_from_epsilon_rejects_trivial_epsilon():
    _, op, meas = _problem()
    with pytest.raises(ParameterError):
        alpha_from_epsilon(meas, op, SparsityBasis(), np.linalg.norm(meas.values))
