"""Interval dynamics: the affinity-propagation recurrence and its ODE limit.

The discrete rule H' = A·H + A·(H0 ⊙ H0) telescopes to a geometric closed
form, and its continuous relaxation is the linear system

    dH/dt = (A - I)·H + b,    b = A·(H0 ⊙ H0),

with b frozen at the interval's entry state H0. Training integrates this
with fixed-step classical RK4 (differentiable, unrolled over the tape);
``analytical_solve`` evaluates the exact solution by eigendecomposition and
exists only to check the solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import NumericsError, Tape, Var
from .sparse import ShapeError, SparseAdjacency


@dataclass
class OdeProblem:
    adj: SparseAdjacency
    h0: np.ndarray
    b: np.ndarray
    horizon: float = 1.0
    step: float = 0.2

    @classmethod
    def build(cls, adj: SparseAdjacency, h0: np.ndarray, horizon: float = 1.0,
              step: float = 0.2) -> "OdeProblem":
        h0 = np.asarray(h0, dtype=np.float64)
        if h0.ndim != 2 or h0.shape[0] != adj.n:
            raise ShapeError(f"initial state {h0.shape} does not match {adj.n} nodes")
        if not horizon > 0:
            raise ValueError(f"horizon must be positive, got {horizon}")
        if not 0 < step <= horizon:
            raise ValueError(f"step must lie in (0, horizon], got {step}")
        return cls(adj=adj, h0=h0, b=adj.matmul(h0 * h0), horizon=float(horizon),
                   step=float(step))


def discrete_propagate(h: np.ndarray, adj: SparseAdjacency, h0: np.ndarray) -> np.ndarray:
    """One layer of the recurrence: A·h plus the constant affinity term."""
    if h.shape != h0.shape or h.shape[0] != adj.n:
        raise ShapeError(f"discrete_propagate: state {h.shape}, origin {h0.shape}, "
                         f"{adj.n} nodes")
    return adj.matmul(h) + adj.matmul(h0 * h0)


def closed_form_propagate(h0: np.ndarray, adj: SparseAdjacency, l: int) -> np.ndarray:
    """H_l = A^l H0 + (sum_{i=1..l} A^i)(H0 ⊙ H0), by iterated products.

    A - I is singular whenever A has unit eigenvalue (every nonempty
    component of a bipartite graph does), so the geometric sum is built up
    term by term instead of through any matrix inverse.
    """
    if l < 0:
        raise ValueError(f"layer count must be >= 0, got {l}")
    term_h = np.array(h0, dtype=np.float64)
    term_s = term_h * term_h
    acc = np.zeros_like(term_h)
    for _ in range(l):
        term_h = adj.matmul(term_h)
        term_s = adj.matmul(term_s)
        acc += term_s
    return term_h + acc


def derivative(h: np.ndarray, problem: OdeProblem) -> np.ndarray:
    """dH/dt = (A - I)·H + b."""
    if h.shape != problem.h0.shape:
        raise ShapeError(f"derivative: {h.shape} vs {problem.h0.shape}")
    return problem.adj.matmul(h) - h + problem.b


def step_sizes(horizon: float, step: float) -> list[float]:
    """Full steps of size ``step``, padded with one shorter final step when
    the horizon is not an integer multiple."""
    n = int(np.floor(horizon / step + 1e-12))
    sizes = [step] * n
    rem = horizon - n * step
    if rem > 1e-12 * horizon:
        sizes.append(rem)
    return sizes


def rk4_solve(problem: OdeProblem) -> np.ndarray:
    """Fixed-step classical RK4 from H0 to the horizon (ndarray path).

    Mirrors rk4_evolve stage for stage so the two paths agree bitwise.
    """
    h = problem.h0.copy()
    for i, eps in enumerate(step_sizes(problem.horizon, problem.step)):
        k1 = derivative(h, problem)
        k2 = derivative(h + (0.5 * eps) * k1, problem)
        k3 = derivative(h + (0.5 * eps) * k2, problem)
        k4 = derivative(h + eps * k3, problem)
        s = k1 + 2.0 * k2
        s = s + 2.0 * k3
        s = s + k4
        h = h + (eps / 6.0) * s
        if not np.all(np.isfinite(h)):
            raise NumericsError(f"non-finite state after RK4 step {i}")
    return h


def rk4_evolve(tape: Tape, adj: SparseAdjacency, h: Var, horizon: float = 1.0,
               step: float = 0.2) -> tuple[Var, int]:
    """Differentiable RK4 over the tape; returns (state at horizon, NFE).

    The forcing b = A·(h ⊙ h) is rebuilt from the entry state so gradients
    flow through it. NFE counts derivative evaluations (4 per step).
    """
    sq = tape.hadamard(h, h)
    b = tape.spmm(adj, sq)

    def deriv(x: Var) -> Var:
        return tape.add(tape.sub(tape.spmm(adj, x), x), b)

    nfe = 0
    for i, eps in enumerate(step_sizes(horizon, step)):
        try:
            k1 = deriv(h)
            k2 = deriv(tape.add(h, tape.scale(k1, 0.5 * eps)))
            k3 = deriv(tape.add(h, tape.scale(k2, 0.5 * eps)))
            k4 = deriv(tape.add(h, tape.scale(k3, eps)))
            s = tape.add(k1, tape.scale(k2, 2.0))
            s = tape.add(s, tape.scale(k3, 2.0))
            s = tape.add(s, k4)
            h = tape.add(h, tape.scale(s, eps / 6.0))
        except NumericsError as exc:
            raise NumericsError(f"{exc} (RK4 step {i})") from None
        nfe += 4
    return h, nfe


def analytical_solve(problem: OdeProblem) -> np.ndarray:
    """Exact solution at t = horizon via eigendecomposition (oracle only).

    H_t = e^{Mt} H0 + t·phi1(Mt)·b with M = A - I and phi1(z) = (e^z - 1)/z,
    phi1(0) = 1. phi1 is entire, so this is defined even where M is
    singular, and equals the resolvent formula wherever that exists.
    """
    n = problem.adj.n
    if n > 500:
        raise ValueError(f"analytical_solve is a dense oracle, refusing n={n} > 500")
    t = problem.horizon
    w, q = np.linalg.eigh(problem.adj.to_dense())
    mu = w - 1.0
    z = mu * t
    phi1 = np.ones_like(z)
    nz = z != 0.0
    phi1[nz] = np.expm1(z[nz]) / z[nz]
    qt_h0 = q.T @ problem.h0
    qt_b = q.T @ problem.b
    return q @ (np.exp(z)[:, None] * qt_h0) + t * (q @ (phi1[:, None] * qt_b))
