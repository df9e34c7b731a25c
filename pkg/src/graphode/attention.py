"""Temporal soft-attention aggregation over the cumulative interaction graph.

Each edge carries its own normalized interaction time, encoded by trainable
cos/sin frequencies (a Bochner-style feature map with exactly unit norm).
The per-edge weight is a bare sigmoid of a linear score over the projected
endpoint embeddings and the time encoding; there is no softmax across the
neighborhood. Messages are Laplacian-normalized by distinct-neighbor
degrees, and nodes with no edges in the given set pass through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Var, stable_sigmoid
from .sparse import ShapeError


@dataclass
class TimeEncoder:
    """d_T trainable frequencies; the encoding of a time t is the 2*d_T
    vector sqrt(1/d_T)*[cos(w_1 t), sin(w_1 t), ..., cos(w_m t), sin(w_m t)]."""
    omega: np.ndarray

    @property
    def d_t(self) -> int:
        return self.omega.shape[0]


def init_time_encoder(d_t: int) -> TimeEncoder:
    """Log-spaced initial frequencies 1/10^((i-1)*4/(d_T-1)), i = 1..d_T,
    spanning periods from O(1) to O(10^4) in normalized time."""
    if d_t < 1:
        raise ValueError(f"d_t must be >= 1, got {d_t}")
    if d_t == 1:
        omega = np.ones(1, dtype=np.float64)
    else:
        expo = np.arange(d_t, dtype=np.float64) * (4.0 / (d_t - 1))
        omega = 1.0 / 10.0 ** expo
    return TimeEncoder(omega=omega)


def encode_times(ts: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Vectorized encoding of many times: row e is the encoding of ts[e]."""
    m = omega.shape[0]
    ang = np.asarray(ts, dtype=np.float64)[:, None] * omega[None, :]
    out = np.empty((ang.shape[0], 2 * m), dtype=np.float64)
    s = np.sqrt(1.0 / m)
    out[:, 0::2] = s * np.cos(ang)
    out[:, 1::2] = s * np.sin(ang)
    return out


def encode_time(t: float, enc: TimeEncoder) -> np.ndarray:
    return encode_times(np.array([t]), enc.omega)[0]


@dataclass
class AttentionLayerParams:
    """Per-layer score parameters: alpha is laid out [query d | time 2*d_T |
    key d] to match the concatenated score input."""
    alpha: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray


def init_attention_layer(d: int, d_t: int, rng: np.random.Generator) -> AttentionLayerParams:
    """Zero alpha starts every attention weight at 0.5; W_Q/W_K get the
    symmetric uniform scaling for fan_in = fan_out = d."""
    bound = np.sqrt(6.0 / (d + d))
    return AttentionLayerParams(
        alpha=np.zeros(2 * d + 2 * d_t, dtype=np.float64),
        w_q=rng.uniform(-bound, bound, size=(d, d)),
        w_k=rng.uniform(-bound, bound, size=(d, d)),
    )


def attention_weight(h_i: np.ndarray, h_j: np.ndarray, t: float,
                     params: AttentionLayerParams, enc: TimeEncoder) -> float:
    """Single-edge weight sigma(alpha . [W_Q h_i ; Phi(t) ; W_K h_j]) for
    destination i, source j."""
    d = params.w_q.shape[0]
    if h_i.shape != (d,) or h_j.shape != (d,):
        raise ShapeError(f"attention_weight: endpoints {h_i.shape}/{h_j.shape}, d={d}")
    a_q = params.alpha[:d]
    a_t = params.alpha[d:d + 2 * enc.d_t]
    a_k = params.alpha[d + 2 * enc.d_t:]
    pre = a_q @ (params.w_q @ h_i) + a_t @ encode_time(t, enc) + a_k @ (params.w_k @ h_j)
    return float(stable_sigmoid(pre))


@dataclass
class MessageGraph:
    """Directed message lists for one edge set: message e flows src[e] ->
    dst[e] at time times[e], scaled by norm[e] = 1/sqrt(|N_dst| |N_src|).
    Degrees count distinct neighbors, so duplicate timestamped edges add
    messages without inflating the normalization. iso marks degree-zero
    nodes (1.0 entries) for the pass-through term."""
    n: int
    dst: np.ndarray
    src: np.ndarray
    times: np.ndarray
    norm: np.ndarray
    iso: np.ndarray

    @property
    def has_isolated(self) -> bool:
        return bool(np.any(self.iso))


def build_message_graph(users: np.ndarray, items: np.ndarray, taus: np.ndarray,
                        n: int) -> MessageGraph | None:
    """Precompute the message lists for aggregate; None for an empty set."""
    if users.size == 0:
        return None
    if users.min() < 0 or items.min() < 0 or max(users.max(), items.max()) >= n:
        raise ShapeError(f"edge references a node outside [0, {n})")
    pairs = np.unique(np.stack([users, items], axis=1), axis=0)
    deg = (np.bincount(pairs[:, 0], minlength=n)
           + np.bincount(pairs[:, 1], minlength=n)).astype(np.float64)
    dst = np.ascontiguousarray(np.concatenate([users, items]), dtype=np.int32)
    src = np.ascontiguousarray(np.concatenate([items, users]), dtype=np.int32)
    times = np.concatenate([taus, taus]).astype(np.float64)
    norm = 1.0 / np.sqrt(deg[dst] * deg[src])
    iso = (deg == 0.0).astype(np.float64)
    return MessageGraph(n=n, dst=dst, src=src, times=times, norm=norm, iso=iso)


def edge_attention(h_plus: np.ndarray, msg: MessageGraph,
                   params: AttentionLayerParams, enc: TimeEncoder) -> np.ndarray:
    """Attention weight of every directed message (ndarray path)."""
    d = params.w_q.shape[0]
    qn = (h_plus @ params.w_q.T) @ params.alpha[:d]
    kn = (h_plus @ params.w_k.T) @ params.alpha[d + 2 * enc.d_t:]
    phi = encode_times(msg.times, enc.omega)
    ts = phi @ params.alpha[d:d + 2 * enc.d_t]
    return stable_sigmoid(qn[msg.dst] + ts + kn[msg.src])


def aggregate(h_plus: np.ndarray, msg: MessageGraph | None,
              params: AttentionLayerParams, enc: TimeEncoder) -> np.ndarray:
    """h_i = sum over in-messages of norm * weight * h_src_plus, with
    identity fallback for nodes outside the edge set."""
    if msg is None:
        return h_plus.copy()
    if h_plus.shape[0] != msg.n:
        raise ShapeError(f"aggregate: {h_plus.shape[0]} rows vs {msg.n} nodes")
    w = edge_attention(h_plus, msg, params, enc) * msg.norm
    out = np.zeros_like(h_plus)
    np.add.at(out, msg.dst, h_plus[msg.src] * w[:, None])
    if msg.has_isolated:
        out += h_plus * msg.iso[:, None]
    return out


def aggregate_traced(tape: Tape, h_plus: Var, msg: MessageGraph | None,
                     alpha: Var, w_q: Var, w_k: Var, omega: Var,
                     d: int, d_t: int) -> Var:
    """Differentiable aggregate over the tape; same math as aggregate."""
    if msg is None:
        return h_plus
    a_q = tape.slice_vec(alpha, 0, d)
    a_t = tape.slice_vec(alpha, d, d + 2 * d_t)
    a_k = tape.slice_vec(alpha, d + 2 * d_t, 2 * d + 2 * d_t)
    qn = tape.matvec(tape.linear(h_plus, w_q), a_q)
    kn = tape.matvec(tape.linear(h_plus, w_k), a_k)
    ts = tape.matvec(tape.time_encode(msg.times, omega), a_t)
    pre = tape.add(tape.add(tape.gather_vec(qn, msg.dst), ts),
                   tape.gather_vec(kn, msg.src))
    w = tape.mul_const(tape.sigmoid(pre), msg.norm)
    msgs = tape.mul_colvec(tape.gather_rows(h_plus, msg.src), w)
    out = tape.scatter_add_rows(msgs, msg.dst, msg.n)
    if msg.has_isolated:
        out = tape.add(out, tape.scale_rows(h_plus, msg.iso))
    return out
