"""Symmetric degree-normalized adjacency in CSR layout.

The adjacency over the joint user+item node space is undirected and carries
1/sqrt(deg_i * deg_j) on every stored entry, where degrees count distinct
neighbors. No self loops are stored; the ODE supplies its own -I term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels


class ShapeError(ValueError):
    pass


@dataclass
class SparseAdjacency:
    n: int
    indptr: np.ndarray   # int32, length n + 1
    indices: np.ndarray  # int32, column index per stored entry
    data: np.ndarray     # float64 normalization weights

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])

    def matmul(self, x: np.ndarray) -> np.ndarray:
        """Dense product A @ x (x has one row per node)."""
        if x.ndim != 2 or x.shape[0] != self.n:
            raise ShapeError(
                f"cannot multiply {self.n}x{self.n} adjacency with operand of shape {x.shape}"
            )
        out = np.zeros((self.n, x.shape[1]), dtype=np.float64)
        x = np.ascontiguousarray(x, dtype=np.float64)
        kernels.csr_matmul(self.indptr, self.indices, self.data, x, out)
        return out

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.n, self.n), dtype=np.float64)
        for i in range(self.n):
            lo, hi = self.indptr[i], self.indptr[i + 1]
            dense[i, self.indices[lo:hi]] = self.data[lo:hi]
        return dense


def _edge_arrays(edges):
    """Accept a list of (u, i[, ...]) tuples or a pair of index arrays."""
    if isinstance(edges, tuple) and len(edges) == 2:
        a = np.asarray(edges[0], dtype=np.int64)
        b = np.asarray(edges[1], dtype=np.int64)
        return a, b
    a = np.array([e[0] for e in edges], dtype=np.int64)
    b = np.array([e[1] for e in edges], dtype=np.int64)
    return a, b


def build_adjacency(edges, n: int) -> SparseAdjacency:
    """Build the normalized undirected adjacency over ``n`` joint node ids.

    Duplicate pairs collapse to a single structural edge before degrees are
    computed, so repeat interactions do not inflate normalization. An empty
    edge list yields the all-zero matrix.
    """
    a, b = _edge_arrays(edges)
    if a.size == 0:
        return SparseAdjacency(
            n=n,
            indptr=np.zeros(n + 1, dtype=np.int32),
            indices=np.zeros(0, dtype=np.int32),
            data=np.zeros(0, dtype=np.float64),
        )
    if a.min() < 0 or b.min() < 0 or max(a.max(), b.max()) >= n:
        raise ValueError(f"edge endpoint out of range for node count {n}")
    if np.any(a == b):
        raise ValueError("self edges are not representable (diagonal must stay zero)")

    rows = np.concatenate([a, b])
    cols = np.concatenate([b, a])
    pairs = np.unique(np.stack([rows, cols], axis=1), axis=0)
    rows, cols = pairs[:, 0], pairs[:, 1]

    deg = np.bincount(rows, minlength=n).astype(np.float64)
    vals = 1.0 / np.sqrt(deg[rows] * deg[cols])

    # np.unique already sorted lexicographically by (row, col) -> valid CSR.
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    indptr = np.cumsum(indptr)
    return SparseAdjacency(
        n=n,
        indptr=indptr.astype(np.int32),
        indices=cols.astype(np.int32),
        data=vals,
    )
