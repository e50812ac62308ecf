import numpy as np
import pytest
from hypothesis import given, strategies as st

from cfm import (RGB_BANDS, BandSpec, DegenerateSpectrumError, EmptyBandError, HadamardIndexer,
                 HyperCube, ParameterError, SensingOperator, SizeError, SolverConfig,
                 SparsityBasis, acquire, extract_spectrum, hyper_acquire, hyper_reconstruct,
                 hyper_solve, measure, pool_bands, reconstruct)
from cfm.hyperspectral import SpectralPhantomSpec, linear_axis, make_spectral_phantom
from cfm.sampling import select_full, select_random

AXIS8 = linear_axis(520.0, 15.0, 8)


def _op(side=16, m=64, seed=0, scale=1.0):
    return SensingOperator(HadamardIndexer(side), select_random(side * side, m, seed), scale)


def _cube(rng, side=16, n=8):
    return HyperCube(rng.random((side, side, n)), linear_axis(520.0, 120.0 / n, n))


def test_single_channel_matches_2d_acquire(rng):
    img = 3 * rng.random((16, 16))
    op = _op()
    for noise in ("none", "poisson"):
        hyper = hyper_acquire(HyperCube(img[:, :, None], [550.0]), op, noise, seed=11)
        flat = acquire(img, op, noise=noise, seed=11)
        np.testing.assert_array_equal(hyper.values[:, 0], flat.values)


def test_separable_cube_measurements(rng):
    img, s = rng.random((16, 16)), rng.random(8)
    op = _op(scale=2.0)
    meas = hyper_acquire(HyperCube(img[:, :, None] * s, AXIS8), op, noise="none")
    np.testing.assert_allclose(meas.values, np.outer(measure(img, op), s), rtol=1e-12)


def test_zero_cube_and_size_mismatch():
    zero = HyperCube(np.zeros((16, 16, 4)), linear_axis(500, 10, 4))
    assert np.all(hyper_acquire(zero, _op()).values == 0)
    with pytest.raises(SizeError):
        hyper_acquire(HyperCube(np.zeros((8, 8, 4)), linear_axis(500, 10, 4)), _op())


def test_rejection_band_zeroes_channels(rng):
    cube = _cube(rng)
    meas = hyper_acquire(cube, _op(), noise="none", rejection_nm=(535.0, 565.0))
    hit = (cube.lambda_axis >= 535) & (cube.lambda_axis < 565)
    assert np.all(meas.values[:, hit] == 0) and np.all(meas.values[:, ~hit] > 0)


def test_full_sampling_noiseless_cube(rng):
    cube = _cube(rng)
    op = SensingOperator(HadamardIndexer(16), select_full(256), 1.0)
    meas = hyper_acquire(cube, op, noise="none")
    out = hyper_reconstruct(meas, op, SparsityBasis("wavelet_orthonormal", "haar", 2),
                            SolverConfig(alpha=1e6, rel_tol=1e-12, max_iters=5000),
                            cube.lambda_axis)
    err = np.linalg.norm(out.values - cube.values) / np.linalg.norm(cube.values)
    assert err < 1e-5
    np.testing.assert_array_equal(out.lambda_axis, cube.lambda_axis)


def test_dirac_spectral_basis_equals_channelwise_solves():
    ph = make_spectral_phantom(SpectralPhantomSpec(side=32, n_beads=4, n_lambda=4,
                                                   lambda_step_nm=30.0, total_flux=4000.0))
    op = _op(side=32, m=256, seed=2)
    meas = hyper_acquire(ph.cube, op, seed=2)
    cfg = SolverConfig(alpha=0.02, rel_tol=1e-12, max_iters=20000)
    joint = hyper_solve(meas, op, SparsityBasis(), cfg).image
    for c in range(4):
        single = reconstruct(type(meas)(meas.selection, meas.values[:, c]), op,
                             SparsityBasis(), cfg).image
        scale = np.abs(single).max()
        np.testing.assert_allclose(joint[:, :, c], single, atol=1e-5 * scale)


def test_hyper_solve_trace_monotone():
    ph = make_spectral_phantom(SpectralPhantomSpec(side=32, n_beads=4, n_lambda=8))
    op = _op(side=32, m=128, seed=4)
    meas = hyper_acquire(ph.cube, op, seed=4)
    res = hyper_solve(meas, op, SparsityBasis("wavelet_orthonormal", "haar", 2),
                      SolverConfig(max_iters=200))
    tr = res.objective_trace
    assert np.all(np.diff(tr) <= 1e-12 * np.abs(tr[:-1]))
    assert res.image.shape == (32, 32, 8) and res.image.min() >= 0


def test_pool_bands_examples(rng):
    cube = _cube(rng)
    whole = pool_bands(cube, BandSpec((("all", 0.0, 1000.0),)))["all"]
    np.testing.assert_allclose(whole, cube.values.sum(axis=2))

    axis = linear_axis(520.0, 7.5, 16)  # 520 .. 632.5 nm
    c16 = HyperCube(rng.random((8, 8, 16)), axis)
    pooled = pool_bands(c16, RGB_BANDS)
    np.testing.assert_allclose(pooled["blue"], c16.values[:, :, :2].sum(axis=2))
    # the red band stops at 630 nm, so the 632.5 nm channel is left out
    total = sum(pooled.values())
    np.testing.assert_allclose(total, c16.values[:, :, axis < 630].sum(axis=2))


@given(st.lists(st.floats(521.0, 631.0), min_size=1, max_size=5, unique=True))
def test_pool_bands_partition_additivity(cuts):
    edges = [500.0] + sorted(cuts) + [700.0]
    bands = BandSpec(tuple((f"b{i}", lo, hi) for i, (lo, hi) in enumerate(zip(edges, edges[1:]))))
    axis = linear_axis(520.0, 7.5, 16)
    cube = HyperCube(np.random.default_rng(0).random((4, 4, 16)), axis)
    try:
        pooled = pool_bands(cube, bands)
    except EmptyBandError:
        return
    np.testing.assert_allclose(sum(pooled.values()), cube.values.sum(axis=2), rtol=1e-12)


def test_band_errors(rng):
    with pytest.raises(EmptyBandError):
        pool_bands(_cube(rng), BandSpec((("uv", 300.0, 400.0),)))
    with pytest.raises(ParameterError):
        BandSpec((("a", 500.0, 540.0), ("b", 530.0, 560.0)))


def test_extract_spectrum_examples(rng):
    cube = _cube(rng)
    s = extract_spectrum(cube, 3, 4, 0)
    np.testing.assert_allclose(s, cube.values[3, 4] / cube.values[3, 4].max())
    assert s.max() == 1.0

    img, spec = rng.random((16, 16)), rng.random(8) + 0.1
    sep = HyperCube(img[:, :, None] * spec, AXIS8)
    for r, c, rad in [(0, 0, 0), (5, 9, 2), (15, 15, 3)]:
        np.testing.assert_allclose(extract_spectrum(sep, r, c, rad), spec / spec.max(), rtol=1e-12)

    with pytest.raises(DegenerateSpectrumError):
        extract_spectrum(HyperCube(np.zeros((8, 8, 4)), linear_axis(500, 10, 4)), 1, 1, 1)
    with pytest.raises(ParameterError):
        extract_spectrum(cube, 16, 0)


def test_cube_validation():
    with pytest.raises(SizeError):
        HyperCube(np.zeros((8, 8, 3)), [1.0, 2.0, 3.0])
    with pytest.raises(ParameterError):
        HyperCube(-np.ones((8, 8, 2)), [1.0, 2.0])
    with pytest.raises(ParameterError):
        HyperCube(np.zeros((8, 8, 2)), [2.0, 1.0])


def test_spectral_phantom():
    spec = SpectralPhantomSpec()
    ph = make_spectral_phantom(spec)
    assert ph.cube.values.shape == (64, 64, 16)
    assert ph.cube.values.sum() == pytest.approx(spec.total_flux)
    assert len(set(ph.labels.tolist())) == 3
    np.testing.assert_array_equal(ph.cube.values, make_spectral_phantom(spec).cube.values)
