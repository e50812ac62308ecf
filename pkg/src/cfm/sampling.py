"""Choosing which Hadamard patterns to project."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .config import STREAM_SELECTION, make_rng
from .errors import DataError, ParameterError
from .hadamard import HadamardIndexer

STRATEGIES = ("random_uniform", "half_half", "full")


def indices_digest(indices) -> str:
    """SHA-256 of the pattern index list (int64 little-endian bytes)."""
    arr = np.asarray(indices, dtype="<i8")
    return hashlib.sha256(arr.tobytes()).hexdigest()


@dataclass(frozen=True)
class PatternSelection:
    """Ordered, duplicate-free list of projected pattern numbers."""

    indices: tuple
    strategy: str
    seed: int
    n_total: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        object.__setattr__(self, "indices", tuple(int(i) for i in idx))
        if self.strategy not in STRATEGIES:
            raise ParameterError(f"unknown strategy {self.strategy!r}")
        if idx.size > self.n_total:
            raise ParameterError("more patterns than the basis holds")
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_total):
            raise ParameterError("pattern index outside [0, N)")
        if np.unique(idx).size != idx.size:
            raise ParameterError("duplicate pattern index in selection")

    @property
    def m(self) -> int:
        return len(self.indices)

    @property
    def digest(self) -> str:
        return indices_digest(self.indices)

    def to_dict(self):
        return {
            "n_total": self.n_total,
            "m": self.m,
            "strategy": self.strategy,
            "seed": self.seed,
            "indices": list(self.indices),
            "sha256": self.digest,
        }

    def to_json(self, **extra) -> str:
        doc = self.to_dict()
        doc.update(extra)
        return json.dumps(doc, indent=1) + "\n"

    @classmethod
    def from_dict(cls, doc):
        try:
            sel = cls(indices=tuple(doc["indices"]), strategy=doc["strategy"],
                      seed=int(doc["seed"]), n_total=int(doc["n_total"]))
        except KeyError as exc:
            raise DataError(f"selection document lacks {exc}") from None
        if "m" in doc and int(doc["m"]) != sel.m:
            raise DataError("selection 'm' disagrees with its index list")
        if "sha256" in doc and doc["sha256"] != sel.digest:
            raise DataError("selection hash does not match its index list")
        return sel

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def select_full(n_total) -> PatternSelection:
    return PatternSelection(tuple(range(n_total)), "full", 0, int(n_total))


def select_random(n_total, m, seed) -> PatternSelection:
    """DC pattern plus ``m - 1`` patterns drawn uniformly without replacement."""
    n_total, m = int(n_total), int(m)
    if not 1 <= m <= n_total:
        raise ParameterError(f"need 1 <= m <= N, got m={m}, N={n_total}")
    rng = make_rng(seed, STREAM_SELECTION)
    rest = rng.choice(np.arange(1, n_total), size=m - 1, replace=False)
    return PatternSelection((0, *rest.tolist()), "random_uniform", int(seed), n_total)


def select_half_half(indexer: HadamardIndexer, m, seed) -> PatternSelection:
    """The m/2 lowest-sequency patterns, then m/2 random ones from the rest."""
    m = int(m)
    n_total = indexer.n_total
    if m % 2:
        raise ParameterError(f"half-half needs an even pattern count, got {m}")
    if not 2 <= m <= n_total:
        raise ParameterError(f"need 2 <= m <= N, got m={m}, N={n_total}")
    order = indexer.low_sequency_order()
    low, high = order[: m // 2], order[m // 2:]
    rng = make_rng(seed, STREAM_SELECTION)
    picked = rng.choice(high, size=m // 2, replace=False)
    return PatternSelection((*low.tolist(), *picked.tolist()), "half_half",
                            int(seed), n_total)


def undersampling_ratio(sel: PatternSelection) -> float:
    """Pixels per measurement, N / m."""
    return sel.n_total / sel.m


def m_from_ratio(n_total, ratio) -> int:
    m = int(round(n_total / float(ratio)))
    if m < 1:
        raise ParameterError(f"undersampling ratio {ratio} leaves no measurement")
    return m
