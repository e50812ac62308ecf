"""Walsh-Hadamard transforms and the binary Hadamard sensing operator.

All transforms are unnormalized (entries of H are +-1, natural Sylvester
order).  A 2D pattern ``k`` is the outer product of two 1D Hadamard rows,
shifted to {0, 1} so it can be displayed on a micromirror array.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import TYPE_CHECKING

import numpy as np

from .config import ORTHONORMAL_TOL
from .errors import PatternIndexError, SizeError, ValidationError

if TYPE_CHECKING:
    from .sampling import PatternSelection

ORDERINGS = ("natural", "sequency")


def is_power_of_two(n) -> bool:
    n = int(n)
    return n >= 1 and (n & (n - 1)) == 0


def _butterfly_axis0(b):
    # in place on a C-contiguous (n, rest) array
    n = b.shape[0]
    rest = b.shape[1]
    h = 1
    while h < n:
        v = b.reshape(n // (2 * h), 2, h * rest)
        top = v[:, 0, :].copy()
        v[:, 0, :] += v[:, 1, :]
        np.subtract(top, v[:, 1, :], out=v[:, 1, :])
        h *= 2
    return b


def fwht(a, axis=-1):
    """Unnormalized Walsh-Hadamard transform of ``a`` along one axis.

    Works on arrays of any rank; the length along ``axis`` must be a power of
    two.  Returns a new float64 array.
    """
    a = np.asarray(a, dtype=np.float64)
    axis = axis % a.ndim
    n = a.shape[axis]
    if not is_power_of_two(n):
        raise SizeError(f"transform length {n} is not a power of two")
    work = np.ascontiguousarray(np.moveaxis(a, axis, 0), dtype=np.float64)
    if work is a or np.shares_memory(work, a):
        work = work.copy()
    flat = work.reshape(n, -1)
    _butterfly_axis0(flat)
    return np.moveaxis(work, 0, axis)


def fwht_1d(v):
    """Return ``H @ v`` for the natural-order +-1 Hadamard matrix.

    >>> fwht_1d([1, 1, 1, 1])
    array([4., 0., 0., 0.])
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise SizeError("fwht_1d expects a vector")
    return fwht(v, axis=0)


def fwht_2d(img):
    """Separable 2D transform ``H @ img @ H`` of a square power-of-two image.

    Leading two axes are transformed; any trailing axes (spectral channels)
    ride along untouched.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim < 2 or img.shape[0] != img.shape[1]:
        raise SizeError(f"expected a square image, got shape {img.shape}")
    if not is_power_of_two(img.shape[0]):
        raise SizeError(f"image side {img.shape[0]} is not a power of two")
    return fwht(fwht(img, axis=0), axis=1)


@lru_cache(maxsize=None)
def _sequency_table(side):
    rows = np.arange(side)
    # sign of H[r, j] is (-1)^popcount(r & j)
    bits = np.bitwise_and.outer(rows, rows)
    parity = np.zeros_like(bits)
    while bits.any():
        parity ^= bits & 1
        bits >>= 1
    signs = 1 - 2 * parity
    seq = np.count_nonzero(np.diff(signs, axis=1), axis=1)
    seq.setflags(write=False)
    return seq


@dataclass(frozen=True)
class HadamardIndexer:
    """Maps pattern numbers ``k`` to pairs of natural-order Hadamard rows.

    ``k = row * side + col`` (row-major).  Under ``ordering="sequency"`` the
    row and column labels are sequency ranks rather than natural indices.
    """

    side: int
    ordering: str = "natural"

    def __post_init__(self):
        if not is_power_of_two(self.side):
            raise SizeError(f"pattern side {self.side} is not a power of two")
        if self.ordering not in ORDERINGS:
            raise ValueError(f"unknown ordering {self.ordering!r}")

    @property
    def n_total(self) -> int:
        return self.side * self.side

    def natural_rows(self, labels):
        """Natural Hadamard row for each 1D label in this ordering."""
        labels = np.asarray(labels, dtype=np.int64)
        if self.ordering == "natural":
            return labels
        inverse = np.argsort(_sequency_table(self.side), kind="stable")
        return inverse[labels]

    def decode(self, k):
        """Natural (row, col) Hadamard indices of pattern(s) ``k``."""
        k = np.asarray(k, dtype=np.int64)
        if np.any((k < 0) | (k >= self.n_total)):
            raise PatternIndexError(f"pattern index out of range [0, {self.n_total})")
        r, c = np.divmod(k, self.side)
        return self.natural_rows(r), self.natural_rows(c)

    def sequency_2d(self):
        """Sum of row and column sequencies for every k = 0..N-1."""
        rows, cols = self.decode(np.arange(self.n_total))
        seq = _sequency_table(self.side)
        return seq[rows] + seq[cols]

    def low_sequency_order(self):
        """All pattern numbers sorted by 2D sequency, ties by k."""
        # stable sort on the sum keeps row-major (r, c) order within ties
        return np.argsort(self.sequency_2d(), kind="stable")


def sequency_of(row_index, indexer: HadamardIndexer) -> int:
    """Number of sign changes along natural-order Hadamard row ``row_index``."""
    row_index = int(row_index)
    if not 0 <= row_index < indexer.side:
        raise PatternIndexError(f"row {row_index} outside [0, {indexer.side})")
    return int(_sequency_table(indexer.side)[row_index])


def hadamard_row(row, side):
    """Natural-order +-1 Hadamard row as an int8 vector."""
    j = np.arange(side)
    bits = np.bitwise_and(int(row), j)
    parity = np.zeros(side, dtype=np.int64)
    while bits.any():
        parity ^= bits & 1
        bits >>= 1
    return (1 - 2 * parity).astype(np.int8)


def pattern_2d(k, indexer: HadamardIndexer):
    """Binary illumination mask ``(h_r (x) h_c + 1) / 2`` for pattern ``k``."""
    r, c = indexer.decode(int(k))
    h = np.outer(hadamard_row(r, indexer.side), hadamard_row(c, indexer.side))
    return ((h + 1) // 2).astype(np.uint8)


@dataclass(frozen=True)
class SensingOperator:
    """Partial binary Hadamard sensing ``x -> lambda * <phi_k, x>``.

    Works on images of shape (side, side) and on cubes (side, side, C), in
    which case every channel sees the same patterns.
    """

    indexer: HadamardIndexer
    selection: "PatternSelection"
    illumination_scale: float = 1.0
    _rows: np.ndarray = field(init=False, repr=False, compare=False)
    _cols: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        idx = np.asarray(self.selection.indices, dtype=np.int64)
        if int(self.selection.n_total) != self.indexer.n_total:
            raise ValidationError(
                f"selection is for N={self.selection.n_total}, "
                f"patterns have N={self.indexer.n_total}")
        if idx.size and (idx.min() < 0 or idx.max() >= self.indexer.n_total):
            raise PatternIndexError("selected pattern index out of range")
        if np.unique(idx).size != idx.size:
            raise ValidationError("selection contains duplicate patterns")
        if not self.illumination_scale >= 0:
            raise ValueError("illumination_scale must be nonnegative")
        rows, cols = self.indexer.decode(idx)
        object.__setattr__(self, "_rows", rows)
        object.__setattr__(self, "_cols", cols)

    @property
    def side(self) -> int:
        return self.indexer.side

    @property
    def m(self) -> int:
        return int(self._rows.size)

    def _check_image(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim < 2 or x.shape[:2] != (self.side, self.side):
            raise SizeError(f"image shape {x.shape} does not match side {self.side}")
        return x

    def forward(self, x):
        x = self._check_image(x)
        spectrum = fwht_2d(x)
        total = x.sum(axis=(0, 1))
        return self.illumination_scale * 0.5 * (total + spectrum[self._rows, self._cols])

    def adjoint(self, y):
        y = np.asarray(y, dtype=np.float64)
        if y.shape[0] != self.m:
            raise SizeError(f"expected {self.m} measurements, got {y.shape[0]}")
        grid = np.zeros((self.side, self.side) + y.shape[1:])
        grid[self._rows, self._cols] = y
        back = fwht_2d(grid)
        back += y.sum(axis=0)
        back *= 0.5 * self.illumination_scale
        return back


def measure(x, op: SensingOperator):
    """Noiseless measurement means ``lambda * <phi_k, x>`` for each selected k."""
    return op.forward(x)


def adjoint_apply(y, op: SensingOperator):
    """Adjoint of :func:`measure`: ``Phi^T y`` as an image."""
    return op.adjoint(y)


def coherence(basis_a, basis_b) -> float:
    """Mutual coherence ``N * max |<a_p, b_k>|^2`` of two orthobases (columns)."""
    a = np.asarray(basis_a, dtype=np.float64)
    b = np.asarray(basis_b, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape != b.shape:
        raise SizeError("coherence needs two N x N matrices")
    n = a.shape[0]
    eye = np.eye(n)
    for name, m in (("basis_a", a), ("basis_b", b)):
        if np.abs(m.T @ m - eye).max() > ORTHONORMAL_TOL:
            raise ValidationError(f"{name} does not have orthonormal columns")
    return float(n * np.max((a.T @ b) ** 2))
