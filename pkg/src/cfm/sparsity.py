"""Sparsifying transforms: Dirac, periodic orthonormal wavelets, undecimated frame.

The transforms act over a chosen set of axes, so the same code serves 2D
images (axes 0 and 1) and the spectral axis of a hyperspectral cube.
Boundaries are periodic throughout.

Coefficient layouts
-------------------
``wavelet_orthonormal``
    Mallat layout, same shape as the input: after each level the
    approximation occupies the leading half of every transformed axis.
``wavelet_undecimated``
    Stack of ``levels * (2**d - 1) + 1`` full-size bands (d transformed
    axes), finest level first, approximation last.  Filters are scaled by
    1/sqrt(2) per axis so the analysis operator is a Parseval frame:
    ``synthesize(analyze(x)) == x`` and synthesis is the exact adjoint.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ParameterError, SizeError
from .hadamard import is_power_of_two

KINDS = ("dirac", "wavelet_orthonormal", "wavelet_undecimated")

_SQ3 = np.sqrt(3.0)
FILTERS = {
    "haar": np.array([1.0, 1.0]) / np.sqrt(2.0),
    "d4": np.array([1 + _SQ3, 3 + _SQ3, 3 - _SQ3, 1 - _SQ3]) / (4 * np.sqrt(2.0)),
}


def _qmf(h):
    # g[t] = (-1)^t h[L-1-t]
    return h[::-1] * (-1.0) ** np.arange(len(h))


@dataclass(frozen=True)
class SparsityBasis:
    """Which representation W to promote sparsity in.

    ``weights`` optionally gives one positive weight per scale, finest level
    first and the approximation band last (``levels + 1`` entries).  ``None``
    means every coefficient is weighted 1.
    """

    kind: str = "dirac"
    filter: str = "haar"
    levels: int = 1
    weights: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown basis kind {self.kind!r}")
        if self.filter not in FILTERS:
            raise ParameterError(f"unknown wavelet filter {self.filter!r}")
        if self.kind != "dirac" and self.levels < 1:
            raise ParameterError("wavelet bases need at least one level")
        if self.weights is not None:
            w = tuple(float(v) for v in self.weights)
            object.__setattr__(self, "weights", w)
            if self.kind != "dirac" and len(w) != self.levels + 1:
                raise ParameterError(f"expected {self.levels + 1} per-scale weights")
            if any(v <= 0 for v in w):
                raise ParameterError("weights must be strictly positive")

    @property
    def orthonormal(self) -> bool:
        return self.kind != "wavelet_undecimated"

    def with_scale_weights(self):
        """Copy of this basis weighted 1/j at level j, approximation 1/(levels+1)."""
        if self.kind == "dirac":
            raise ParameterError("scale weights are undefined for the Dirac basis")
        return replace(self, weights=tuple(1.0 / j for j in range(1, self.levels + 2)))


def _check_levels(shape, axes, basis):
    if basis.kind == "dirac":
        return
    for ax in axes:
        n = shape[ax]
        if not is_power_of_two(n):
            raise SizeError(f"axis length {n} is not a power of two")
        if basis.levels > int(np.log2(n)):
            raise ParameterError(
                f"{basis.levels} levels exceed log2({n}) = {int(np.log2(n))}")


# -- orthonormal, decimated -------------------------------------------------

def _shift0(v, s):
    return v if s == 0 else np.roll(v, s, axis=0)


def _dwt_step(x, h, g, axis):
    # polyphase form: a[i] = sum_t h[t] x[(2i + t) mod n]
    v = x.swapaxes(0, axis)
    phases = (v[0::2], v[1::2])
    a = 0.0
    d = 0.0
    for t in range(len(h)):
        xs = _shift0(phases[t % 2], -(t // 2))
        a = a + h[t] * xs
        d = d + g[t] * xs
    return np.concatenate([a, d], axis=0).swapaxes(0, axis)


def _idwt_step(c, h, g, axis):
    v = c.swapaxes(0, axis)
    half = v.shape[0] // 2
    a, d = v[:half], v[half:]
    phases = [0.0, 0.0]
    for t in range(len(h)):
        phases[t % 2] = phases[t % 2] + _shift0(h[t] * a + g[t] * d, t // 2)
    out = np.empty(v.shape)
    out[0::2] = phases[0]
    out[1::2] = phases[1]
    return out.swapaxes(0, axis)


def dwt(x, filter="haar", levels=1, axes=(0, 1)):
    """Multi-level periodic orthonormal DWT over ``axes`` (Mallat layout)."""
    h = FILTERS[filter]
    g = _qmf(h)
    c = np.array(x, dtype=np.float64)
    for lev in range(levels):
        sl = [slice(None)] * c.ndim
        for ax in axes:
            sl[ax] = slice(0, c.shape[ax] >> lev)
        sl = tuple(sl)
        sub = c[sl]
        for ax in axes:
            sub = _dwt_step(sub, h, g, ax)
        c[sl] = sub
    return c


def idwt(c, filter="haar", levels=1, axes=(0, 1)):
    """Inverse (and adjoint) of :func:`dwt`."""
    h = FILTERS[filter]
    g = _qmf(h)
    x = np.array(c, dtype=np.float64)
    for lev in reversed(range(levels)):
        sl = [slice(None)] * x.ndim
        for ax in axes:
            sl[ax] = slice(0, x.shape[ax] >> lev)
        sl = tuple(sl)
        sub = x[sl]
        for ax in reversed(axes):
            sub = _idwt_step(sub, h, g, ax)
        x[sl] = sub
    return x


def _dwt_level_map(n, levels):
    # 1-based detail level of each Mallat position; approximation -> levels + 1
    lv = np.full(n, levels + 1)
    for j in range(1, levels + 1):
        lv[n >> j: n >> (j - 1)] = j
    return lv


# -- undecimated frame ------------------------------------------------------

def _filt(x, f, step, axis):
    out = 0.0
    for t, ft in enumerate(f):
        out = out + ft * np.roll(x, -t * step, axis=axis)
    return out


def _filt_adj(c, f, step, axis):
    out = 0.0
    for t, ft in enumerate(f):
        out = out + ft * np.roll(c, t * step, axis=axis)
    return out


def swt(x, filter="haar", levels=1, axes=(0, 1)):
    """Undecimated (a trous) Parseval frame analysis; returns stacked bands."""
    h = FILTERS[filter] / np.sqrt(2.0)
    g = _qmf(FILTERS[filter]) / np.sqrt(2.0)
    approx = np.asarray(x, dtype=np.float64)
    bands = []
    for lev in range(levels):
        step = 1 << lev
        parts = [approx]
        for ax in axes:
            parts = [y for p in parts for y in (_filt(p, h, step, ax), _filt(p, g, step, ax))]
        approx = parts[0]
        bands.extend(parts[1:])
    bands.append(approx)
    return np.stack(bands)


def iswt(bands, filter="haar", levels=1, axes=(0, 1)):
    """Adjoint of :func:`swt`, which is also its left inverse."""
    h = FILTERS[filter] / np.sqrt(2.0)
    g = _qmf(FILTERS[filter]) / np.sqrt(2.0)
    bands = np.asarray(bands, dtype=np.float64)
    per_level = 2 ** len(axes) - 1
    approx = bands[-1]
    for lev in reversed(range(levels)):
        step = 1 << lev
        parts = [approx, *bands[lev * per_level:(lev + 1) * per_level]]
        for ax in reversed(axes):
            parts = [_filt_adj(parts[2 * i], h, step, ax) + _filt_adj(parts[2 * i + 1], g, step, ax)
                     for i in range(len(parts) // 2)]
        approx = parts[0]
    return approx


# -- basis-level interface ----------------------------------------------------

def analyze_axes(x, basis: SparsityBasis, axes):
    """``W^T x`` as an array (input shape, or band stack for the frame)."""
    x = np.asarray(x, dtype=np.float64)
    _check_levels(x.shape, axes, basis)
    if basis.kind == "dirac":
        return x.copy()
    if basis.kind == "wavelet_orthonormal":
        return dwt(x, basis.filter, basis.levels, axes)
    return swt(x, basis.filter, basis.levels, axes)


def synthesize_axes(c, basis: SparsityBasis, axes):
    c = np.asarray(c, dtype=np.float64)
    if basis.kind == "dirac":
        return c.copy()
    if basis.kind == "wavelet_orthonormal":
        return idwt(c, basis.filter, basis.levels, axes)
    return iswt(c, basis.filter, basis.levels, axes)


def level_map(basis: SparsityBasis, shape, axes):
    """Integer decomposition level of every coefficient (levels+1 = approx).

    The returned array broadcasts against the coefficient array produced by
    :func:`analyze_axes` for an input of ``shape``.
    """
    if basis.kind == "dirac":
        raise ParameterError("the Dirac basis has no scales")
    _check_levels(shape, axes, basis)
    if basis.kind == "wavelet_orthonormal":
        lv = None
        for ax in axes:
            per_axis = _dwt_level_map(shape[ax], basis.levels)
            bshape = [1] * len(shape)
            bshape[ax] = shape[ax]
            per_axis = per_axis.reshape(bshape)
            lv = per_axis if lv is None else np.minimum(lv, per_axis)
        return lv
    per_level = 2 ** len(axes) - 1
    lv = np.repeat(np.arange(1, basis.levels + 1), per_level)
    lv = np.append(lv, basis.levels + 1)
    return lv.reshape((-1,) + (1,) * len(shape))


def coefficient_weights(basis: SparsityBasis, shape, axes):
    """Per-coefficient l1 weights (broadcastable) for an input of ``shape``."""
    if basis.weights is None:
        return np.ones(1)
    if basis.kind == "dirac":
        return np.full(1, basis.weights[0])
    lv = level_map(basis, shape, axes)
    return np.asarray(basis.weights)[lv - 1]


def _image_axes(shape):
    return tuple(range(len(shape)))


def analyze(x, basis: SparsityBasis):
    """Flat coefficient vector ``W^T x`` over every axis of ``x``.

    A 2D image gets the separable 2D transform; a 1D vector the 1D one.  The
    undecimated frame yields ``levels * (2**d - 1) + 1`` bands of the input's
    size (``3 * levels * N + N`` for an image).
    """
    x = np.asarray(x, dtype=np.float64)
    return analyze_axes(x, basis, _image_axes(x.shape)).ravel()


def _infer_shape(n_coef, basis):
    bands = 1 if basis.orthonormal else 3 * basis.levels + 1
    n_pix, rem = divmod(n_coef, bands)
    side = int(round(np.sqrt(n_pix)))
    if rem or side * side != n_pix:
        raise SizeError(f"{n_coef} coefficients do not fit a square image for {basis.kind}")
    return (side, side)


def synthesize(c, basis: SparsityBasis, shape=None):
    """Image from a flat coefficient vector; left inverse of :func:`analyze`.

    ``shape`` is the image shape and defaults to the square 2D image implied
    by the coefficient count.
    """
    c = np.asarray(c, dtype=np.float64).ravel()
    if shape is None:
        shape = _infer_shape(c.size, basis)
    shape = tuple(shape)
    axes = _image_axes(shape)
    bands = 1 if basis.orthonormal else basis.levels * (2 ** len(axes) - 1) + 1
    expected = bands * int(np.prod(shape))
    if c.size != expected:
        raise SizeError(f"expected {expected} coefficients, got {c.size}")
    _check_levels(shape, axes, basis)
    layout = shape if basis.orthonormal else (bands,) + shape
    return synthesize_axes(c.reshape(layout), basis, axes)


def soft_threshold(c, thresholds):
    """``sign(c) * max(|c| - t, 0)`` elementwise."""
    c = np.asarray(c, dtype=np.float64)
    t = np.asarray(thresholds, dtype=np.float64)
    if np.any(t < 0):
        raise ParameterError("thresholds must be nonnegative")
    return np.sign(c) * np.maximum(np.abs(c) - t, 0.0)


def scale_weights(basis: SparsityBasis, shape):
    """Flat per-coefficient weights 1/j at level j, approximation 1/(levels+1)."""
    if basis.kind == "dirac":
        raise ParameterError("scale weights are undefined for the Dirac basis")
    shape = tuple(shape)
    axes = _image_axes(shape)
    lv = level_map(basis, shape, axes)
    full_shape = shape if basis.orthonormal else (lv.shape[0],) + shape
    return np.broadcast_to(1.0 / lv, full_shape).ravel().copy()
