"""Shared builders for the test suite."""

import numpy as np

from graphode.data import InteractionLog
from graphode.sparse import build_adjacency


def make_log(users, items, n_users, n_items, timestamps=None):
    """InteractionLog from joint-id arrays; timestamps default to 0,1,2,..."""
    users = np.asarray(users, dtype=np.int32)
    items = np.asarray(items, dtype=np.int32)
    if timestamps is None:
        timestamps = np.arange(users.shape[0], dtype=np.int64)
    return InteractionLog(users=users, items=items,
                          timestamps=np.asarray(timestamps, dtype=np.int64),
                          n_users=n_users, n_items=n_items,
                          user_labels=[f"u{k}" for k in range(n_users)],
                          item_labels=[f"i{k}" for k in range(n_items)])


def random_log(rng, n_users, n_items, n, cover_all=True):
    """Random interaction log; cover_all forces every node to appear."""
    users = rng.integers(0, n_users, n).astype(np.int32)
    items = (n_users + rng.integers(0, n_items, n)).astype(np.int32)
    if cover_all:
        assert n >= n_users + n_items
        users[:n_users] = np.arange(n_users)
        items[n_users:n_users + n_items] = n_users + np.arange(n_items)
    return make_log(users, items, n_users, n_items)


def random_bipartite_adjacency(rng, n_users, n_items, n_edges):
    """Normalized adjacency over a random bipartite edge set (unique pairs)."""
    pairs = set()
    while len(pairs) < n_edges:
        pairs.add((int(rng.integers(n_users)),
                   n_users + int(rng.integers(n_items))))
    edges = sorted(pairs)
    return build_adjacency(edges, n_users + n_items)


def central_diff(f, arr, idx, h=1e-6):
    """Central finite difference of scalar f() w.r.t. arr[idx], in place."""
    orig = arr[idx]
    arr[idx] = orig + h
    fp = f()
    arr[idx] = orig - h
    fm = f()
    arr[idx] = orig
    return (fp - fm) / (2.0 * h)


def rel_err(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)
