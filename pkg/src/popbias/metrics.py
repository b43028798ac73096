"""Accuracy and popularity-bias metrics over recommendation lists."""

from __future__ import annotations

import math
from typing import Collection, Iterable, Mapping, Sequence

import numpy as np

from .data import ItemPopularity, _pearson

RATING_MIN, RATING_MAX = 1.0, 10.0


def rmse(predictions: Iterable[tuple[float, float]]) -> float | None:
    """Root mean squared error with scores clamped to the rating scale.

    Returns None for an empty list.
    """
    pairs = np.asarray(list(predictions), dtype=np.float64).reshape(-1, 2)
    if len(pairs) == 0:
        return None
    err = np.clip(pairs[:, 0], RATING_MIN, RATING_MAX) - pairs[:, 1]
    return float(np.sqrt(np.mean(err * err)))


def ndcg_at_k(recommended: Sequence[str], holdout: Mapping[str, float], k: int = 10) -> float | None:
    """Graded NDCG: the gain of a hit is its held-out rating.

    Returns None when the ideal DCG is zero (empty holdout), meaning the user
    is excluded from the average.
    """
    ideal = sorted(holdout.values(), reverse=True)[:k]
    idcg = sum(g / math.log2(p + 2) for p, g in enumerate(ideal))
    if idcg <= 0:
        return None
    dcg = sum(holdout.get(item, 0.0) / math.log2(p + 2) for p, item in enumerate(recommended[:k]))
    return dcg / idcg


def pop_corr(train_pop: ItemPopularity, rec_counts: Mapping[str, int]) -> float:
    """Pearson correlation between training popularity and recommendation frequency.

    Runs over every training item (never-recommended items count 0). Zero
    variance on either side is reported as 0.
    """
    items = list(train_pop.counts)
    pop = np.array([train_pop.counts[i] for i in items], dtype=np.float64)
    rec = np.array([rec_counts.get(i, 0) for i in items], dtype=np.float64)
    r = _pearson(pop, rec)
    return 0.0 if r is None else r


def _mean_fraction(items: Collection[str], fractions: Mapping[str, float]) -> float:
    return sum(fractions[i] for i in items) / len(items)


def arp(
    rec_lists: Mapping[str, Sequence[str]], train_pop: ItemPopularity
) -> tuple[float, dict[str, float]]:
    """Average recommendation popularity, overall and per user with a non-empty list."""
    per_user = {
        u: _mean_fraction(items, train_pop.fractions) for u, items in rec_lists.items() if items
    }
    if not per_user:
        raise ValueError("ARP needs at least one non-empty recommendation list")
    return float(np.mean(list(per_user.values()))), per_user


def pl(
    rec_lists: Mapping[str, Sequence[str]],
    profiles: Mapping[str, Collection[str]],
    train_pop: ItemPopularity,
) -> tuple[float, dict[str, float]]:
    """Popularity lift in percent: 100 * (q - p) / p per user, then averaged.

    ``p`` is the mean popularity of the user's training profile and ``q`` that
    of their recommendations.
    """
    fr = train_pop.fractions
    per_user = {}
    for u, items in rec_lists.items():
        if not items:
            continue
        p = _mean_fraction(profiles[u], fr)
        q = _mean_fraction(items, fr)
        per_user[u] = 100.0 * (q - p) / p
    if not per_user:
        raise ValueError("PL needs at least one non-empty recommendation list")
    return float(np.mean(list(per_user.values()))), per_user


def agg_div(rec_lists: Mapping[str, Sequence[str]] | Iterable[Sequence[str]], catalog: Collection[str]) -> float:
    """Share of the catalog that appears in at least one recommendation list."""
    if not catalog:
        raise ValueError("empty catalog")
    lists = rec_lists.values() if isinstance(rec_lists, Mapping) else rec_lists
    seen = set()
    for items in lists:
        seen.update(items)
    return len(seen & set(catalog)) / len(catalog)
