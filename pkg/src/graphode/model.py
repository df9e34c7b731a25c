"""Autoregressive composition of ODE evolution and temporal aggregation.

One layer per interval: evolve the entry state through the interval ODE,
then aggregate over an edge view with temporal attention to produce the next
interval's entry state. The final node representation is the mean of all
K+1 snapshots. Training minimizes BPR loss over (user, positive, negative)
triples with gradients taken through the whole unrolled computation.
"""

from __future__ import annotations

import copy
import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .attention import (AttentionLayerParams, TimeEncoder, aggregate_traced,
                        build_message_graph, init_attention_layer,
                        init_time_encoder)
from .autodiff import NumericsError, Tape, Var
from .data import DataError, InteractionLog
from .ode import rk4_evolve
from .optim import AdamW
from .sparse import SparseAdjacency, build_adjacency
from .system import HybridSystem, build_hybrid_system

VARIANTS = ("full", "att", "ode", "gcn")
VIEWS = ("current", "previous", "all")

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class SignalPolicy:
    """Which train edges feed each module at layer k: 'current' is interval
    k only, 'previous' is every edge up to and including interval k, 'all'
    ignores the clock entirely."""
    ode_view: str = "current"
    attn_view: str = "previous"

    def __post_init__(self):
        for v in (self.ode_view, self.attn_view):
            if v not in VIEWS:
                raise ValueError(f"unknown signal view '{v}', expected one of {VIEWS}")

    def label(self) -> str:
        return f"{self.ode_view}-{self.attn_view}"


ORIGIN = SignalPolicy("current", "previous")


@dataclass
class ModelParams:
    e0: np.ndarray
    layers: list[AttentionLayerParams]
    encoder: TimeEncoder

    @property
    def d(self) -> int:
        return self.e0.shape[1]

    @property
    def d_t(self) -> int:
        return self.encoder.d_t

    @property
    def k(self) -> int:
        return len(self.layers)

    @classmethod
    def create(cls, n_nodes: int, d: int, d_t: int, k: int,
               rng: np.random.Generator) -> "ModelParams":
        e0 = rng.normal(0.0, 0.1, size=(n_nodes, d))
        layers = [init_attention_layer(d, d_t, rng) for _ in range(k)]
        return cls(e0=e0, layers=layers, encoder=init_time_encoder(d_t))

    def as_dict(self) -> dict[str, np.ndarray]:
        """Flat name -> array view (shared storage) for the optimizer."""
        out = {"e0": self.e0, "omega": self.encoder.omega}
        for k, layer in enumerate(self.layers):
            out[f"alpha_{k}"] = layer.alpha
            out[f"w_q_{k}"] = layer.w_q
            out[f"w_k_{k}"] = layer.w_k
        return out

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)


class GraphViews:
    """Lazy cache of per-layer adjacencies and message graphs so repeated
    forwards do not rebuild CSR structures every minibatch."""

    def __init__(self, system: HybridSystem):
        self.system = system
        self._adj: dict[tuple[str, int], SparseAdjacency] = {}
        self._msg: dict[tuple[str, int], object] = {}

    def _slice(self, view: str, k: int):
        if view == "current":
            return self.system.interval_edges(k)
        if view == "previous":
            return self.system.cumulative_edges(k)
        return self.system.all_edges()

    def adjacency(self, view: str, k: int) -> SparseAdjacency:
        key = (view, 0 if view == "all" else k)
        if key not in self._adj:
            sl = self._slice(view, k)
            self._adj[key] = build_adjacency((sl.users, sl.items), self.system.n_nodes)
        return self._adj[key]

    def messages(self, view: str, k: int):
        key = (view, 0 if view == "all" else k)
        if key not in self._msg:
            sl = self._slice(view, k)
            self._msg[key] = build_message_graph(sl.users, sl.items, sl.taus,
                                                 self.system.n_nodes)
        return self._msg[key]


@dataclass
class ForwardResult:
    tape: Tape
    snapshots: list[Var]
    pre_aggregate: list[Var]  # post-ODE state feeding each layer's aggregation
    leaves: dict[str, Var]
    nfe: int


def forward(system: HybridSystem, params: ModelParams, policy: SignalPolicy = ORIGIN,
            variant: str = "full", step: float = 0.2,
            views: GraphViews | None = None) -> ForwardResult:
    """Run the K-layer recurrence on a fresh tape and return every snapshot.

    The result stays differentiable: callers build a loss from
    ``snapshots`` on ``tape`` and read gradients off ``leaves``.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant '{variant}', expected one of {VARIANTS}")
    if views is None:
        views = GraphViews(system)
    tape = Tape()
    leaves = {name: tape.leaf(arr) for name, arr in params.as_dict().items()}
    d, d_t = params.d, params.d_t

    h = leaves["e0"]
    snapshots = [h]
    pre_aggregate = []
    nfe = 0
    for k in range(params.k):
        if variant == "att":  # the only variant without the interval ODE
            h_plus = h
        else:
            adj = views.adjacency(policy.ode_view, k)
            h_plus, n = rk4_evolve(tape, adj, h, horizon=1.0, step=step)
            nfe += n
        pre_aggregate.append(h_plus)
        if variant in ("full", "att"):
            msg = views.messages(policy.attn_view, k)
            h = aggregate_traced(tape, h_plus, msg, leaves[f"alpha_{k}"],
                                 leaves[f"w_q_{k}"], leaves[f"w_k_{k}"],
                                 leaves["omega"], d, d_t)
        elif variant == "gcn":
            h = tape.spmm(views.adjacency(policy.attn_view, k), h_plus)
        else:
            h = h_plus
        snapshots.append(h)
    return ForwardResult(tape=tape, snapshots=snapshots, pre_aggregate=pre_aggregate,
                         leaves=leaves, nfe=nfe)


def final_representation(snapshots: list[np.ndarray]) -> np.ndarray:
    """Arithmetic mean of the K+1 snapshots (true mean, so magnitudes do not
    grow with K; rankings are invariant to the positive scale either way)."""
    if not snapshots:
        raise ValueError("no snapshots to combine")
    acc = snapshots[0].copy()
    for s in snapshots[1:]:
        acc += s
    return acc / len(snapshots)


def final_representation_traced(tape: Tape, snapshots: list[Var]) -> Var:
    acc = snapshots[0]
    for s in snapshots[1:]:
        acc = tape.add(acc, s)
    return tape.scale(acc, 1.0 / len(snapshots))


def embed(system: HybridSystem, params: ModelParams, policy: SignalPolicy = ORIGIN,
          variant: str = "full", step: float = 0.2,
          views: GraphViews | None = None) -> tuple[np.ndarray, list[np.ndarray], int]:
    """Forward pass for inference: (final representation, snapshots, NFE)."""
    fr = forward(system, params, policy, variant, step, views)
    snaps = [v.data for v in fr.snapshots]
    return final_representation(snaps), snaps, fr.nfe


def score(u: int, i: int, h: np.ndarray) -> float:
    n = h.shape[0]
    if not (0 <= u < n and 0 <= i < n):
        raise IndexError(f"node id out of range: ({u}, {i}) with {n} nodes")
    return float(h[u] @ h[i])


def bpr_loss(batch: tuple[np.ndarray, np.ndarray, np.ndarray], h: np.ndarray) -> float:
    """Sum of -ln sigma(score(u,i) - score(u,j)) over (u, i, j) triples.

    No L2 term here: regularization happens as decoupled weight decay in
    the optimizer.
    """
    users, pos, neg = batch
    if users.size == 0:
        raise ValueError("empty BPR batch")
    margin = np.sum(h[users] * (h[neg] - h[pos]), axis=1)
    return float(np.sum(np.maximum(margin, 0.0) + np.log1p(np.exp(-np.abs(margin)))))


def _bpr_loss_traced(tape: Tape, h: Var, users: np.ndarray, pos: np.ndarray,
                     neg: np.ndarray) -> Var:
    hu = tape.gather_rows(h, users)
    diff = tape.sub(tape.gather_rows(h, neg), tape.gather_rows(h, pos))
    return tape.sum_all(tape.softplus(tape.rowdot(hu, diff)))


@dataclass
class TrainIndex:
    """Per-user positive sets over the joint item id range [lo, hi)."""
    items_lo: int
    items_hi: int
    by_user: dict[int, set]


def build_train_index(train: InteractionLog) -> TrainIndex:
    by_user: dict[int, set] = {}
    for u, i in zip(train.users.tolist(), train.items.tolist()):
        by_user.setdefault(u, set()).add(i)
    return TrainIndex(items_lo=train.n_users,
                      items_hi=train.n_users + train.n_items,
                      by_user=by_user)


def sample_negatives(u: int, rng: np.random.Generator, index: TrainIndex) -> int:
    """Uniform over items the user never interacted with, by rejection."""
    seen = index.by_user.get(u, set())
    n_items = index.items_hi - index.items_lo
    if len(seen) >= n_items:
        raise DataError(f"user {u} interacted with every item, cannot sample a negative")
    while True:
        cand = index.items_lo + int(rng.integers(n_items))
        if cand not in seen:
            return cand


@dataclass
class FitConfig:
    k: int = 3
    d: int = 64
    d_t: int = 16
    lr: float = 0.001
    weight_decay: float = 0.001
    step: float = 0.2
    epochs: int = 200
    patience: int = 20
    batch_size: int = 2048
    seed: int = 0
    variant: str = "full"
    policy: SignalPolicy = field(default_factory=lambda: ORIGIN)


@dataclass
class FitResult:
    params: ModelParams
    system: HybridSystem
    log: list[dict]
    best_epoch: int
    best_mrr: float
    nfe_per_forward: int


def fit(train: InteractionLog, valid: InteractionLog, cfg: FitConfig,
        log_fn=None) -> FitResult:
    """Full-pass BPR training with one fresh negative per positive per epoch.

    After every epoch the validation MRR is measured (masking train
    positives only); the parameters of the best epoch are returned. Stops
    early after ``patience`` epochs without improvement.
    """
    system = build_hybrid_system(train, cfg.k)
    views = GraphViews(system)
    rng = np.random.default_rng(cfg.seed)
    params = ModelParams.create(system.n_nodes, cfg.d, cfg.d_t, cfg.k, rng)
    opt = AdamW(lr=cfg.lr, weight_decay=cfg.weight_decay)
    index = build_train_index(train)
    users = train.users
    pos = train.items
    n_pos = users.shape[0]

    best = params.copy()
    best_mrr = -np.inf
    best_epoch = 0
    bad = 0
    log: list[dict] = []
    nfe_per_forward = 0

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        neg = np.fromiter((sample_negatives(int(u), rng, index) for u in users),
                          dtype=np.int32, count=n_pos)
        perm = rng.permutation(n_pos)
        epoch_loss = 0.0
        try:
            for lo in range(0, n_pos, cfg.batch_size):
                sel = perm[lo:lo + cfg.batch_size]
                fr = forward(system, params, cfg.policy, cfg.variant, cfg.step, views)
                nfe_per_forward = fr.nfe
                h = final_representation_traced(fr.tape, fr.snapshots)
                loss = _bpr_loss_traced(fr.tape, h, users[sel], pos[sel], neg[sel])
                fr.tape.backward(loss)
                grads = {name: leaf.grad for name, leaf in fr.leaves.items()
                         if leaf.grad is not None}
                opt.step(params.as_dict(), grads)
                epoch_loss += float(loss.data)
        except NumericsError as exc:
            raise NumericsError(f"training diverged at epoch {epoch}: {exc}") from None

        h_eval, _, _ = embed(system, params, cfg.policy, cfg.variant, cfg.step, views)
        ranks, _ = metrics.rank_interactions(
            h_eval, valid.users, valid.items, items_lo=index.items_lo,
            items_hi=index.items_hi, seen_by_user=index.by_user)
        if ranks:
            mrr = metrics.mrr(ranks)
            r5 = metrics.recall_at_k(ranks, 5)
            r10 = metrics.recall_at_k(ranks, 10)
        else:
            mrr = r5 = r10 = 0.0
        row = {"epoch": epoch, "loss": epoch_loss, "recall@5": r5,
               "recall@10": r10, "mrr": mrr, "nfe": nfe_per_forward,
               "wall_seconds": time.perf_counter() - t0}
        log.append(row)
        if log_fn is not None:
            log_fn(row)

        if mrr > best_mrr:
            best_mrr = mrr
            best_epoch = epoch
            best = params.copy()
            bad = 0
        else:
            bad += 1
            if bad >= cfg.patience:
                break

    return FitResult(params=best, system=system, log=log, best_epoch=best_epoch,
                     best_mrr=best_mrr, nfe_per_forward=nfe_per_forward)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def save_checkpoint(path, params: ModelParams, seed: int, cfg: dict) -> None:
    """Versioned dump of all tensors plus the config provenance; float64
    arrays round-trip bit-exactly through npz."""
    meta = {"version": CHECKPOINT_VERSION, "seed": seed, "config": cfg,
            "config_hash": config_hash(cfg), "k": params.k}
    arrays = {"e0": params.e0, "omega": params.encoder.omega}
    for k, layer in enumerate(params.layers):
        arrays[f"alpha_{k}"] = layer.alpha
        arrays[f"w_q_{k}"] = layer.w_q
        arrays[f"w_k_{k}"] = layer.w_k
    buf = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez(path, __meta__=buf, **arrays)


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    with np.load(path) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"checkpoint version {meta['version']} not supported "
                             f"(expected {CHECKPOINT_VERSION})")
        layers = [AttentionLayerParams(alpha=z[f"alpha_{k}"], w_q=z[f"w_q_{k}"],
                                       w_k=z[f"w_k_{k}"])
                  for k in range(meta["k"])]
        params = ModelParams(e0=z["e0"], layers=layers,
                             encoder=TimeEncoder(omega=z["omega"]))
    return params, meta
