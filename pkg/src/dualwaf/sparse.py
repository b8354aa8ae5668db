"""Minimal immutable sparse vector and helpers to stack them for numpy/scipy."""
from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class SparseVector:
    """Strictly increasing ``indices`` with matching ``values``; zeros elsewhere."""

    __slots__ = ("indices", "values")

    def __init__(self, indices: Sequence[int] = (), values: Sequence[float] = ()):
        idx = np.asarray(indices, dtype=np.int64)
        val = np.asarray(values, dtype=np.float64)
        if idx.ndim != 1 or idx.shape != val.shape:
            raise ValueError("indices and values must be 1-D and equally long")
        if idx.size and (idx[0] < 0 or np.any(np.diff(idx) <= 0)):
            raise ValueError("indices must be non-negative and strictly increasing")
        idx.setflags(write=False)
        val.setflags(write=False)
        self.indices = idx
        self.values = val

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]]) -> "SparseVector":
        pairs = sorted(pairs)
        return cls([i for i, _ in pairs], [w for _, w in pairs])

    def items(self) -> list[tuple[int, float]]:
        return list(zip(self.indices.tolist(), self.values.tolist()))

    def __len__(self) -> int:
        return int(self.indices.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseVector):
            return NotImplemented
        return (np.array_equal(self.indices, other.indices)
                and np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash((self.indices.tobytes(), self.values.tobytes()))

    def __repr__(self) -> str:
        return f"SparseVector({self.items()!r})"

    def norm(self) -> float:
        return math.sqrt(float(np.dot(self.values, self.values)))

    def sq_norm(self) -> float:
        return float(np.dot(self.values, self.values))

    def scaled(self, factor: float) -> "SparseVector":
        if factor == 0:
            return SparseVector()
        return SparseVector(self.indices, self.values * factor)

    def max_index(self) -> int:
        return int(self.indices[-1]) if self.indices.size else -1


def dot(a: SparseVector, b: SparseVector) -> float:
    """Merge-style dot product over the shared indices."""
    if not len(a) or not len(b):
        return 0.0
    common, ia, ib = np.intersect1d(a.indices, b.indices, assume_unique=True, return_indices=True)
    if not common.size:
        return 0.0
    return float(np.dot(a.values[ia], b.values[ib]))


def sq_distance(a: SparseVector, b: SparseVector) -> float:
    d = a.sq_norm() + b.sq_norm() - 2.0 * dot(a, b)
    return max(d, 0.0)


def stack(vectors: Sequence[SparseVector], n_features: int | None = None) -> sp.csr_matrix:
    """Rows of a CSR matrix, one per vector."""
    if n_features is None:
        n_features = max((v.max_index() for v in vectors), default=-1) + 1
    indptr = np.zeros(len(vectors) + 1, dtype=np.int64)
    for i, v in enumerate(vectors):
        indptr[i + 1] = indptr[i] + len(v)
    if vectors:
        indices = np.concatenate([v.indices for v in vectors]) if indptr[-1] else np.zeros(0, np.int64)
        data = np.concatenate([v.values for v in vectors]) if indptr[-1] else np.zeros(0)
    else:
        indices, data = np.zeros(0, np.int64), np.zeros(0)
    return sp.csr_matrix((data, indices, indptr), shape=(len(vectors), max(n_features, 0)))
