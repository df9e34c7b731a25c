"""Ranking metrics over full-catalog score lists.

Every test interaction is ranked independently: the user's scores against
the whole item catalog, minus masked (already-seen) items, sorted
descending with ties broken by ascending item id. Cold users and items
(absent from training) are skipped and counted, never silently dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class RankingResult:
    user: int
    item: int
    rank: int          # 1-based among the user's candidate items
    n_candidates: int


@dataclass
class SkipCounts:
    cold_users: int = 0
    cold_items: int = 0
    masked_targets: int = 0

    @property
    def total(self) -> int:
        return self.cold_users + self.cold_items + self.masked_targets


def recall_at_k(results: list[RankingResult], k: int) -> float:
    if not results:
        raise ValueError("recall over an empty result list")
    return float(np.mean([r.rank <= k for r in results]))


def mrr(results: list[RankingResult]) -> float:
    if not results:
        raise ValueError("MRR over an empty result list")
    return float(np.mean([1.0 / r.rank for r in results]))


def summarize(results: list[RankingResult], per_user: bool = False) -> dict:
    """Metric dict; per_user averages within each user before across users."""
    if not per_user:
        return {"recall@5": recall_at_k(results, 5),
                "recall@10": recall_at_k(results, 10),
                "mrr": mrr(results)}
    groups: dict[int, list[RankingResult]] = {}
    for r in results:
        groups.setdefault(r.user, []).append(r)
    per = [(recall_at_k(g, 5), recall_at_k(g, 10), mrr(g)) for g in groups.values()]
    arr = np.array(per)
    return {"recall@5": float(arr[:, 0].mean()),
            "recall@10": float(arr[:, 1].mean()),
            "mrr": float(arr[:, 2].mean())}


def rank_interactions(h: np.ndarray, eval_users: np.ndarray, eval_items: np.ndarray,
                      items_lo: int, items_hi: int,
                      seen_by_user: dict[int, set],
                      mask_extra: dict[int, set] | None = None,
                      known_items: set | None = None,
                      mask_seen: bool = True) -> tuple[list[RankingResult], SkipCounts]:
    """Rank each (user, item) interaction against the full catalog.

    ``seen_by_user`` maps train users to their train item sets (joint ids);
    it defines both which users/items are warm and what gets masked.
    ``mask_extra`` adds per-user masked items (the train+valid mode);
    ``mask_seen=False`` disables masking entirely but cold-start skipping
    still applies.
    """
    if known_items is None:
        known_items = set()
        for s in seen_by_user.values():
            known_items |= s
    skips = SkipCounts()
    results: list[RankingResult] = []

    order = np.argsort(eval_users, kind="stable")
    scores = None
    cur_user = -1
    for e in order:
        u = int(eval_users[e])
        i = int(eval_items[e])
        if u not in seen_by_user:
            skips.cold_users += 1
            continue
        if i not in known_items:
            skips.cold_items += 1
            continue
        if u != cur_user:
            cur_user = u
            scores = h[items_lo:items_hi] @ h[u]
        masked = set()
        if mask_seen:
            masked |= seen_by_user[u]
            if mask_extra is not None:
                masked |= mask_extra.get(u, set())
        if i in masked:
            skips.masked_targets += 1
            continue
        keep = np.ones(items_hi - items_lo, dtype=bool)
        if masked:
            midx = np.fromiter(masked, dtype=np.int64) - items_lo
            keep[midx] = False
        t = i - items_lo
        s_t = scores[t]
        cand = scores[keep]
        ids = np.nonzero(keep)[0]
        greater = int(np.sum(cand > s_t))
        tie_lower = int(np.sum((cand == s_t) & (ids < t)))
        results.append(RankingResult(user=u, item=i, rank=1 + greater + tie_lower,
                                     n_candidates=int(keep.sum())))
    return results, skips
