"""Minimal reverse-mode differentiation over dense float64 arrays.

A :class:`Tape` records every primitive operation in construction order,
which is already a topological order, so the backward pass is a single
reverse sweep that visits each node exactly once. The op set is exactly what
the model needs; there is no general broadcasting. Values are plain numpy
arrays; every op traps non-finite outputs unless ``TRAP_NONFINITE`` is
cleared.

Gradient convention: ``backward`` seeds d(loss)/d(loss) = 1 and accumulates
vector-Jacobian products into ``Var.grad`` (None until touched).
"""

from __future__ import annotations

import numpy as np

from .sparse import ShapeError, SparseAdjacency
from . import kernels

TRAP_NONFINITE = True


class NumericsError(ArithmeticError):
    pass


def _check(name: str, arr: np.ndarray) -> np.ndarray:
    if TRAP_NONFINITE and not np.all(np.isfinite(arr)):
        raise NumericsError(f"non-finite values produced by {name}")
    return arr


class Var:
    """One tape node: a value, its accumulated gradient, and a VJP closure."""

    __slots__ = ("data", "grad", "_vjp")

    def __init__(self, data, vjp=None):
        self.data = data
        self.grad = None
        self._vjp = vjp

    @property
    def shape(self):
        return self.data.shape


def _acc(var: Var, g: np.ndarray) -> None:
    var.grad = g if var.grad is None else var.grad + g


class Tape:
    """Append-only record of one forward computation."""

    def __init__(self):
        self.nodes: list[Var] = []

    def leaf(self, data) -> Var:
        v = Var(np.asarray(data, dtype=np.float64))
        self.nodes.append(v)
        return v

    def _record(self, name, data, vjp) -> Var:
        v = Var(_check(name, data), vjp)
        self.nodes.append(v)
        return v

    def backward(self, loss: Var) -> None:
        """Reverse sweep from a scalar loss; call once per tape."""
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            if node.grad is not None and node._vjp is not None:
                node._vjp(node.grad)

    # ----- primitive ops ---------------------------------------------------

    def add(self, x: Var, y: Var) -> Var:
        if x.data.shape != y.data.shape:
            raise ShapeError(f"add: {x.data.shape} vs {y.data.shape}")

        def vjp(g):
            _acc(x, g)
            _acc(y, g)

        return self._record("add", x.data + y.data, vjp)

    def sub(self, x: Var, y: Var) -> Var:
        if x.data.shape != y.data.shape:
            raise ShapeError(f"sub: {x.data.shape} vs {y.data.shape}")

        def vjp(g):
            _acc(x, g)
            _acc(y, -g)

        return self._record("sub", x.data - y.data, vjp)

    def scale(self, x: Var, c: float) -> Var:
        c = float(c)

        def vjp(g):
            _acc(x, c * g)

        return self._record("scale", c * x.data, vjp)

    def mul_const(self, x: Var, c: np.ndarray) -> Var:
        """Elementwise product with a constant array of identical shape."""
        if x.data.shape != c.shape:
            raise ShapeError(f"mul_const: {x.data.shape} vs {c.shape}")

        def vjp(g):
            _acc(x, g * c)

        return self._record("mul_const", x.data * c, vjp)

    def hadamard(self, x: Var, y: Var) -> Var:
        if x.data.shape != y.data.shape:
            raise ShapeError(f"hadamard: {x.data.shape} vs {y.data.shape}")

        def vjp(g):
            _acc(x, g * y.data)
            _acc(y, g * x.data)

        return self._record("hadamard", x.data * y.data, vjp)

    def linear(self, x: Var, w: Var) -> Var:
        """Row-wise map by w: returns x @ w.T, so row i is w @ x[i]."""
        if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[1]:
            raise ShapeError(f"linear: {x.data.shape} vs {w.data.shape}")

        def vjp(g):
            _acc(x, g @ w.data)
            _acc(w, g.T @ x.data)

        return self._record("linear", x.data @ w.data.T, vjp)

    def spmm(self, adj: SparseAdjacency, x: Var) -> Var:
        """Sparse-dense product A @ x; A must be symmetric (guaranteed by
        build_adjacency), so the input gradient is A @ g."""

        def vjp(g):
            _acc(x, adj.matmul(g))

        return self._record("spmm", adj.matmul(x.data), vjp)

    def sigmoid(self, x: Var) -> Var:
        out = stable_sigmoid(x.data)

        def vjp(g):
            _acc(x, g * out * (1.0 - out))

        return self._record("sigmoid", out, vjp)

    def softplus(self, x: Var) -> Var:
        """log(1 + exp(x)), evaluated in the overflow-safe split form."""
        z = x.data
        out = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))

        def vjp(g):
            _acc(x, g * stable_sigmoid(z))

        return self._record("softplus", out, vjp)

    def gather_rows(self, x: Var, idx: np.ndarray) -> Var:
        idx = np.ascontiguousarray(idx, dtype=np.int32)
        n = x.data.shape[0]

        def vjp(g):
            out = np.zeros_like(x.data)
            kernels.scatter_add_rows(np.ascontiguousarray(g), idx, out)
            _acc(x, out)

        return self._record("gather_rows", x.data[idx], vjp)

    def scatter_add_rows(self, x: Var, idx: np.ndarray, n: int) -> Var:
        if x.data.ndim != 2 or idx.shape[0] != x.data.shape[0]:
            raise ShapeError(f"scatter_add_rows: {x.data.shape} with {idx.shape[0]} indices")
        idx = np.ascontiguousarray(idx, dtype=np.int32)
        out = np.zeros((n, x.data.shape[1]), dtype=np.float64)
        kernels.scatter_add_rows(np.ascontiguousarray(x.data), idx, out)

        def vjp(g):
            _acc(x, g[idx])

        return self._record("scatter_add_rows", out, vjp)

    def gather_vec(self, v: Var, idx: np.ndarray) -> Var:
        if v.data.ndim != 1:
            raise ShapeError(f"gather_vec needs a vector, got {v.data.shape}")
        idx = np.ascontiguousarray(idx, dtype=np.int32)
        n = v.data.shape[0]

        def vjp(g):
            _acc(v, np.bincount(idx, weights=g, minlength=n))

        return self._record("gather_vec", v.data[idx], vjp)

    def mul_colvec(self, x: Var, v: Var) -> Var:
        """Scale row e of x by v[e] (v is a differentiable vector)."""
        if x.data.ndim != 2 or v.data.shape != (x.data.shape[0],):
            raise ShapeError(f"mul_colvec: {x.data.shape} vs {v.data.shape}")

        def vjp(g):
            _acc(x, g * v.data[:, None])
            _acc(v, np.sum(g * x.data, axis=1))

        return self._record("mul_colvec", x.data * v.data[:, None], vjp)

    def scale_rows(self, x: Var, c: np.ndarray) -> Var:
        """Scale row e of x by the constant c[e]."""
        if x.data.ndim != 2 or c.shape != (x.data.shape[0],):
            raise ShapeError(f"scale_rows: {x.data.shape} vs {c.shape}")

        def vjp(g):
            _acc(x, g * c[:, None])

        return self._record("scale_rows", x.data * c[:, None], vjp)

    def matvec(self, x: Var, w: Var) -> Var:
        if x.data.ndim != 2 or w.data.shape != (x.data.shape[1],):
            raise ShapeError(f"matvec: {x.data.shape} vs {w.data.shape}")

        def vjp(g):
            _acc(x, g[:, None] * w.data[None, :])
            _acc(w, x.data.T @ g)

        return self._record("matvec", x.data @ w.data, vjp)

    def rowdot(self, x: Var, y: Var) -> Var:
        if x.data.shape != y.data.shape or x.data.ndim != 2:
            raise ShapeError(f"rowdot: {x.data.shape} vs {y.data.shape}")

        def vjp(g):
            _acc(x, g[:, None] * y.data)
            _acc(y, g[:, None] * x.data)

        return self._record("rowdot", np.sum(x.data * y.data, axis=1), vjp)

    def slice_vec(self, v: Var, lo: int, hi: int) -> Var:
        if v.data.ndim != 1:
            raise ShapeError(f"slice_vec needs a vector, got {v.data.shape}")

        def vjp(g):
            full = np.zeros_like(v.data)
            full[lo:hi] = g
            _acc(v, full)

        return self._record("slice_vec", v.data[lo:hi].copy(), vjp)

    def time_encode(self, ts: np.ndarray, omega: Var) -> Var:
        """Unit-norm cos/sin features of constant times at trainable
        frequencies: row e is sqrt(1/m) * [cos(w_1 t_e), sin(w_1 t_e), ...]."""
        m = omega.data.shape[0]
        ang = ts[:, None] * omega.data[None, :]
        s = np.sqrt(1.0 / m)
        cos, sin = np.cos(ang), np.sin(ang)
        out = np.empty((ts.shape[0], 2 * m), dtype=np.float64)
        out[:, 0::2] = s * cos
        out[:, 1::2] = s * sin

        def vjp(g):
            dw = s * np.sum(ts[:, None] * (-sin * g[:, 0::2] + cos * g[:, 1::2]), axis=0)
            _acc(omega, dw)

        return self._record("time_encode", out, vjp)

    def sum_all(self, x: Var) -> Var:
        def vjp(g):
            _acc(x, np.full_like(x.data, float(g)))

        return self._record("sum_all", np.asarray(np.sum(x.data)), vjp)


def stable_sigmoid(x):
    """Logistic function, overflow-safe for the whole float64 range."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out
