"""Synthetic rating assignment under the five popularity/rating scenarios.

1. ratings uniform on 1..10, unrelated to popularity
2. popular items rated higher: Normal(normalized popularity, sigma)
3. popular items rated lower: Normal(inverted normalized popularity, sigma)
4. uniform base; the largest profiles re-drawn from Poisson(normalized popularity)
5. as 4 with the inverted normalized popularity

All draws come from one PCG64 stream consumed in canonical (user, item)
order, so the output depends only on the skeleton and the spec.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import (
    InteractionSkeleton,
    RatingDataset,
    item_popularity,
    normalize_popularity,
    profile_stats,
    top_profile_users,
)

SCENARIOS = {
    1: "no relation between popularity and rating",
    2: "popular items rated higher",
    3: "popular items rated lower",
    4: "big profiles rate popular items higher",
    5: "big profiles rate popular items lower",
}


@dataclass(frozen=True)
class ScenarioSpec:
    scenario_id: int
    sigma: float = 1.0
    profile_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.scenario_id not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario_id!r}; expected one of 1..5")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not 0 < self.profile_fraction <= 1:
            raise ValueError(f"profile_fraction must be in (0, 1], got {self.profile_fraction}")


def _item_means(skeleton: InteractionSkeleton, invert: bool) -> np.ndarray:
    norm = normalize_popularity(item_popularity(skeleton), invert=invert)
    per_item = np.array([norm.get(i, np.nan) for i in skeleton.item_ids])
    return per_item[skeleton.item_idx]


def synthesize_ratings(skeleton: InteractionSkeleton, spec: ScenarioSpec) -> RatingDataset:
    if len(skeleton) == 0:
        raise ValueError("cannot synthesize ratings for an empty skeleton")
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    n = len(skeleton)
    sid = spec.scenario_id

    if sid in (2, 3):
        mean = _item_means(skeleton, invert=sid == 3)
        x = rng.normal(mean, spec.sigma)
        ratings = np.clip(np.rint(x), 1, 10)
    else:
        ratings = rng.integers(1, 11, size=n)
        if sid in (4, 5):
            top = top_profile_users(profile_stats(skeleton), spec.profile_fraction)
            is_top = np.array([u in top for u in skeleton.user_ids], dtype=bool)
            rows = np.flatnonzero(is_top[skeleton.user_idx])
            lam = _item_means(skeleton, invert=sid == 5)[rows]
            ratings[rows] = np.clip(rng.poisson(lam), 1, 10)

    return RatingDataset.from_skeleton(skeleton, ratings.astype(np.int64))
