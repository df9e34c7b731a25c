"""Hybrid dynamic interaction system: pivot times and per-interval edge sets.

The training window [t_min, t_max] is cut into K equal slots. Time is then
rescaled so every slot has unit length (normalized time tau runs from 0 to K),
which gives each per-interval ODE solve a horizon of exactly 1 regardless of
whether raw timestamps span days or years. Because the log is time-sorted,
interval k is a contiguous slice train[offsets[k]:offsets[k+1]] and the
cumulative edge set through interval k is the prefix train[:offsets[k+1]].
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from .data import DataError, InteractionLog

SNAPSHOT_VERSION = 1


@dataclass
class EdgeSlice:
    """A view of (user, item, tau) triples backing one module input."""

    users: np.ndarray
    items: np.ndarray
    taus: np.ndarray

    def __len__(self) -> int:
        return int(self.users.shape[0])


@dataclass
class HybridSystem:
    n_users: int
    n_items: int
    K: int
    pivots: np.ndarray      # float64, normalized boundaries [0, 1, ..., K]
    raw_pivots: np.ndarray  # float64, t_min + k * span / K
    users: np.ndarray       # int32, all train edges, time-sorted
    items: np.ndarray       # int32
    timestamps: np.ndarray  # int64 raw
    taus: np.ndarray        # float64 normalized times
    offsets: np.ndarray     # int64, K+1 slice boundaries into the arrays above

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items

    def __len__(self) -> int:
        return int(self.users.shape[0])

    def interval_edges(self, k: int) -> EdgeSlice:
        lo, hi = int(self.offsets[k]), int(self.offsets[k + 1])
        return EdgeSlice(self.users[lo:hi], self.items[lo:hi], self.taus[lo:hi])

    def cumulative_edges(self, k: int) -> EdgeSlice:
        hi = int(self.offsets[k + 1])
        return EdgeSlice(self.users[:hi], self.items[:hi], self.taus[:hi])

    def all_edges(self) -> EdgeSlice:
        return EdgeSlice(self.users, self.items, self.taus)

    def normalize_time(self, t) -> np.ndarray:
        span = self.raw_pivots[-1] - self.raw_pivots[0]
        return self.K * (np.asarray(t, dtype=np.float64) - self.raw_pivots[0]) / span


def build_hybrid_system(train: InteractionLog, K: int) -> HybridSystem:
    """Partition a time-sorted training log into K unit-length intervals."""
    if K < 1:
        raise DataError(f"interval count must be >= 1, got {K}")
    if len(train) == 0:
        raise DataError("cannot build a system from an empty training log")
    if not train.is_sorted():
        raise DataError("training log must be sorted by timestamp")
    t_min = int(train.timestamps[0])
    t_max = int(train.timestamps[-1])
    if t_max == t_min:
        raise DataError("zero time span: all training timestamps are equal")
    span = float(t_max - t_min)
    tau = K * (train.timestamps.astype(np.float64) - t_min) / span
    interval = np.minimum(np.floor(tau).astype(np.int64), K - 1)
    # interval is non-decreasing along the sorted log, so slice boundaries
    # are just the counts per interval accumulated.
    counts = np.bincount(interval, minlength=K)
    offsets = np.zeros(K + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return HybridSystem(
        n_users=train.n_users,
        n_items=train.n_items,
        K=K,
        pivots=np.arange(K + 1, dtype=np.float64),
        raw_pivots=t_min + np.arange(K + 1, dtype=np.float64) * span / K,
        users=train.users.copy(),
        items=train.items.copy(),
        timestamps=train.timestamps.copy(),
        taus=tau,
        offsets=offsets,
    )


def save_system(path, system: HybridSystem) -> None:
    """Write a versioned snapshot that round-trips bit-exactly (npz)."""
    meta = json.dumps(
        {
            "version": SNAPSHOT_VERSION,
            "n_users": system.n_users,
            "n_items": system.n_items,
            "K": system.K,
        }
    )
    with open(path, "wb") as fh:
        np.savez(
            fh,
            meta=np.frombuffer(meta.encode("utf-8"), dtype=np.uint8),
            pivots=system.pivots,
            raw_pivots=system.raw_pivots,
            users=system.users,
            items=system.items,
            timestamps=system.timestamps,
            taus=system.taus,
            offsets=system.offsets,
        )


def load_system(path) -> HybridSystem:
    with open(path, "rb") as fh:
        blob = io.BytesIO(fh.read())
    arc = np.load(blob)
    meta = json.loads(bytes(arc["meta"]).decode("utf-8"))
    if meta.get("version") != SNAPSHOT_VERSION:
        raise DataError(
            f"snapshot version {meta.get('version')!r} not supported "
            f"(expected {SNAPSHOT_VERSION})"
        )
    return HybridSystem(
        n_users=int(meta["n_users"]),
        n_items=int(meta["n_items"]),
        K=int(meta["K"]),
        pivots=arc["pivots"],
        raw_pivots=arc["raw_pivots"],
        users=arc["users"],
        items=arc["items"],
        timestamps=arc["timestamps"],
        taus=arc["taus"],
        offsets=arc["offsets"],
    )
