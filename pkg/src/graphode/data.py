"""Interaction-log ingestion and chronological splitting.

Both supported formats are "one interaction per line":

* MovieLens: tab-separated ``user \\t item \\t rating \\t timestamp``
* Amazon ratings: comma-separated ``user,item,rating,timestamp`` with
  arbitrary string ids

Ratings are treated as implicit positives and dropped. User and item ids are
densely remapped in order of first appearance; items live in the joint node
space at an offset of ``n_users`` so a single embedding table indexes both
endpoint types.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class DataError(ValueError):
    pass


class TemporalEdge(NamedTuple):
    user: int
    item: int       # joint node id, already offset by n_users
    timestamp: int  # raw seconds


@dataclass
class InteractionLog:
    users: np.ndarray       # int32 user node ids, [0, n_users)
    items: np.ndarray       # int32 item node ids, [n_users, n_users + n_items)
    timestamps: np.ndarray  # int64 raw seconds
    n_users: int
    n_items: int
    user_labels: list
    item_labels: list

    def __len__(self) -> int:
        return int(self.users.shape[0])

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items

    def edges(self) -> list[TemporalEdge]:
        return [
            TemporalEdge(int(u), int(i), int(t))
            for u, i, t in zip(self.users, self.items, self.timestamps)
        ]

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.timestamps) >= 0))


def _parse_rows(path, sep, n_fields=4):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split(sep)
            if len(parts) != n_fields:
                raise DataError(
                    f"{path}:{lineno}: expected {n_fields} fields separated by "
                    f"{sep!r}, got {len(parts)}"
                )
            try:
                ts = int(parts[3])
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad timestamp {parts[3]!r}") from None
            if ts < 0:
                raise DataError(f"{path}:{lineno}: negative timestamp {ts}")
            rows.append((parts[0], parts[1], ts))
    if not rows:
        raise DataError(f"{path}: no interactions found")
    return rows


def _build_log(rows) -> InteractionLog:
    user_index: dict = {}
    item_index: dict = {}
    users = np.empty(len(rows), dtype=np.int64)
    items = np.empty(len(rows), dtype=np.int64)
    times = np.empty(len(rows), dtype=np.int64)
    for k, (u, i, t) in enumerate(rows):
        users[k] = user_index.setdefault(u, len(user_index))
        items[k] = item_index.setdefault(i, len(item_index))
        times[k] = t
    n_users = len(user_index)
    items += n_users
    order = np.lexsort((items, users, times))
    return InteractionLog(
        users=users[order].astype(np.int32),
        items=items[order].astype(np.int32),
        timestamps=times[order],
        n_users=n_users,
        n_items=len(item_index),
        user_labels=list(user_index),
        item_labels=list(item_index),
    )


def parse_movielens(path) -> InteractionLog:
    """Parse a MovieLens-style TSV ratings file into a sorted log."""
    return _build_log(_parse_rows(path, "\t"))


def parse_amazon(path) -> InteractionLog:
    """Parse an Amazon-style ratings CSV into a sorted log."""
    return _build_log(_parse_rows(path, ","))


def parse_interactions(path, fmt: str) -> InteractionLog:
    if fmt == "movielens":
        return parse_movielens(path)
    if fmt == "amazon":
        return parse_amazon(path)
    raise DataError(f"unknown dataset format {fmt!r}")


def _slice_log(log: InteractionLog, lo: int, hi: int) -> InteractionLog:
    return InteractionLog(
        users=log.users[lo:hi],
        items=log.items[lo:hi],
        timestamps=log.timestamps[lo:hi],
        n_users=log.n_users,
        n_items=log.n_items,
        user_labels=log.user_labels,
        item_labels=log.item_labels,
    )


def chronological_split(
    log: InteractionLog, ratios=(0.8, 0.1, 0.1)
) -> tuple[InteractionLog, InteractionLog, InteractionLog]:
    """Split a time-sorted log into train/valid/test by interaction count.

    The first floor(r_train * n) interactions go to train, the next
    floor(r_valid * n) to valid, the remainder to test.
    """
    n = len(log)
    if n < 10:
        raise DataError(f"refusing to split {n} interactions (need at least 10)")
    if not log.is_sorted():
        raise DataError("log must be sorted by timestamp before splitting")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {ratios}")
    n_train = int(ratios[0] * n)
    n_valid = int(ratios[1] * n)
    return (
        _slice_log(log, 0, n_train),
        _slice_log(log, n_train, n_train + n_valid),
        _slice_log(log, n_train + n_valid, n),
    )
