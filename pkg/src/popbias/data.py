"""Interaction and rating datasets, popularity statistics, and skeleton generation.

Users and items are opaque string ids. Internally every dataset keeps the
sorted tuple of ids it knows about and integer index arrays into them, so
index order coincides with lexicographic id order. Interactions are stored in
canonical ``(user, item)`` order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np


class DataError(ValueError):
    """Raised for malformed, empty or inconsistent interaction data."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class InteractionSkeleton:
    """Who consumed what, without rating values."""

    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    user_idx: np.ndarray
    item_idx: np.ndarray

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]]) -> "InteractionSkeleton":
        pairs = [(str(u), str(i)) for u, i in pairs]
        if not pairs:
            raise DataError("no interactions")
        user_ids, item_ids, u, i, _ = _index_pairs(pairs)
        return cls(user_ids, item_ids, u, i)

    def __len__(self) -> int:
        return len(self.user_idx)

    @property
    def n_users(self) -> int:
        return int(np.unique(self.user_idx).size)

    @property
    def n_items(self) -> int:
        return int(np.unique(self.item_idx).size)

    def pairs(self) -> list[tuple[str, str]]:
        return [(self.user_ids[u], self.item_ids[i]) for u, i in zip(self.user_idx, self.item_idx)]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, InteractionSkeleton):
            return NotImplemented
        return self.pairs() == other.pairs()


@dataclass(frozen=True, eq=False)
class RatingDataset:
    """(user, item, rating) triples with integer ratings on the 1..10 scale.

    ``user_ids``/``item_ids`` may list ids without any triple when the dataset
    was produced by :meth:`select`; the index space is kept so that subsets of
    one dataset stay aligned with each other.
    """

    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    user_idx: np.ndarray
    item_idx: np.ndarray
    ratings: np.ndarray

    @classmethod
    def from_triples(cls, triples: Iterable[tuple[str, str, int]]) -> "RatingDataset":
        triples = [(str(u), str(i), r) for u, i, r in triples]
        if not triples:
            raise DataError("no ratings")
        user_ids, item_ids, u, i, order = _index_pairs([(a, b) for a, b, _ in triples])
        r = np.asarray([triples[k][2] for k in order])
        _check_ratings(r)
        return cls(user_ids, item_ids, u, i, _readonly(r.astype(np.int64)))

    @classmethod
    def from_skeleton(cls, skeleton: InteractionSkeleton, ratings: np.ndarray) -> "RatingDataset":
        """Attach ratings given in the skeleton's canonical interaction order."""
        r = np.asarray(ratings)
        if r.shape != skeleton.user_idx.shape:
            raise DataError(f"expected {len(skeleton)} ratings, got {r.shape}")
        _check_ratings(r)
        return cls(
            skeleton.user_ids,
            skeleton.item_ids,
            skeleton.user_idx,
            skeleton.item_idx,
            _readonly(r.astype(np.int64)),
        )

    def __len__(self) -> int:
        return len(self.user_idx)

    @property
    def n_users(self) -> int:
        return int(np.unique(self.user_idx).size)

    @property
    def n_items(self) -> int:
        return int(np.unique(self.item_idx).size)

    def skeleton(self) -> InteractionSkeleton:
        return InteractionSkeleton(self.user_ids, self.item_ids, self.user_idx, self.item_idx)

    def select(self, mask: np.ndarray) -> "RatingDataset":
        """Keep the triples where ``mask`` is true, preserving the id universe."""
        mask = np.asarray(mask, dtype=bool)
        return RatingDataset(
            self.user_ids,
            self.item_ids,
            _readonly(self.user_idx[mask].copy()),
            _readonly(self.item_idx[mask].copy()),
            _readonly(self.ratings[mask].copy()),
        )

    def triples(self) -> list[tuple[str, str, int]]:
        return [
            (self.user_ids[u], self.item_ids[i], int(r))
            for u, i, r in zip(self.user_idx, self.item_idx, self.ratings)
        ]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RatingDataset):
            return NotImplemented
        return self.triples() == other.triples()


def _index_pairs(pairs: list[tuple[str, str]]):
    seen: set[tuple[str, str]] = set()
    for p in pairs:
        if p in seen:
            raise DataError(f"duplicate interaction (user={p[0]!r}, item={p[1]!r})")
        seen.add(p)
    user_ids = tuple(sorted({u for u, _ in pairs}))
    item_ids = tuple(sorted({i for _, i in pairs}))
    upos = {u: k for k, u in enumerate(user_ids)}
    ipos = {i: k for k, i in enumerate(item_ids)}
    u = np.fromiter((upos[a] for a, _ in pairs), dtype=np.int64, count=len(pairs))
    i = np.fromiter((ipos[b] for _, b in pairs), dtype=np.int64, count=len(pairs))
    order = np.lexsort((i, u))
    return user_ids, item_ids, _readonly(u[order]), _readonly(i[order]), order


def _check_ratings(r: np.ndarray) -> None:
    if r.size and (not np.all(np.equal(np.mod(r, 1), 0)) or r.min() < 1 or r.max() > 10):
        bad = r[(np.mod(r, 1) != 0) | (r < 1) | (r > 10)][0]
        raise DataError(f"rating {bad!r} outside the integer scale 1..10")


# --- file io -------------------------------------------------------------


def _read_rows(path: str | Path, want_rating: bool) -> list[tuple]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    rows: list[tuple] = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        line = line.rstrip("\r")
        if not line.strip():
            continue
        fields = line.split(",")
        if lineno == 1 and fields[:2] == ["user", "item"]:
            continue
        if len(fields) not in (2, 3) or not fields[0] or not fields[1]:
            raise DataError(f"{path}: line {lineno}: malformed line {line!r}")
        if want_rating:
            if len(fields) != 3:
                raise DataError(f"{path}: line {lineno}: missing rating column")
            try:
                rating = int(fields[2])
            except ValueError:
                raise DataError(f"{path}: line {lineno}: rating {fields[2]!r} is not an integer") from None
            rows.append((fields[0], fields[1], rating))
        else:
            rows.append((fields[0], fields[1]))
    if not rows:
        raise DataError(f"{path}: no interactions")
    return rows


def load_interactions(path: str | Path) -> InteractionSkeleton:
    """Read a ``user,item[,rating]`` CSV as a skeleton; any rating column is ignored."""
    return InteractionSkeleton.from_pairs(_read_rows(path, want_rating=False))


def load_ratings(path: str | Path) -> RatingDataset:
    return RatingDataset.from_triples(_read_rows(path, want_rating=True))


def format_interactions(data: InteractionSkeleton | RatingDataset) -> str:
    if isinstance(data, RatingDataset):
        lines = ["user,item,rating"]
        lines += [f"{u},{i},{r}" for u, i, r in data.triples()]
    else:
        lines = ["user,item"]
        lines += [f"{u},{i}" for u, i in data.pairs()]
    return "\n".join(lines) + "\n"


# --- statistics ----------------------------------------------------------


@dataclass(frozen=True)
class ItemPopularity:
    """Number of distinct users per item, and that count over the user total."""

    counts: Mapping[str, int]
    n_users: int
    fractions: Mapping[str, float] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(
            self, "fractions", {i: c / self.n_users for i, c in self.counts.items()}
        )


@dataclass(frozen=True)
class ProfileStats:
    sizes: Mapping[str, int]


def _item_counts(data) -> np.ndarray:
    return np.bincount(data.item_idx, minlength=len(data.item_ids))


def item_popularity(data: InteractionSkeleton | RatingDataset) -> ItemPopularity:
    if len(data) == 0:
        raise DataError("popularity of an empty dataset")
    counts = _item_counts(data)
    return ItemPopularity(
        {data.item_ids[k]: int(c) for k, c in enumerate(counts) if c > 0},
        data.n_users,
    )


def profile_stats(data: InteractionSkeleton | RatingDataset) -> ProfileStats:
    sizes = np.bincount(data.user_idx, minlength=len(data.user_ids))
    return ProfileStats({data.user_ids[k]: int(s) for k, s in enumerate(sizes) if s > 0})


def normalize_popularity(pop: ItemPopularity, invert: bool = False) -> dict[str, float]:
    """Min-max map raw counts linearly onto [1, 10]; ``invert`` reflects to 11 - n.

    If every item has the same count, all items map to 1 (10 when inverted).
    """
    if not pop.counts:
        raise DataError("no items to normalize")
    items = list(pop.counts)
    c = np.array([pop.counts[i] for i in items], dtype=np.float64)
    lo, hi = c.min(), c.max()
    if hi == lo:
        n = np.ones_like(c)
    else:
        n = 1.0 + 9.0 * (c - lo) / (hi - lo)
    if invert:
        n = 11.0 - n
    return {i: float(v) for i, v in zip(items, n)}


def top_profile_users(stats: ProfileStats, fraction: float = 0.2) -> set[str]:
    """The ``ceil(fraction * |U|)`` users with the largest profiles.

    Ties at the cutoff go to the lexicographically smaller user id.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n = math.ceil(fraction * len(stats.sizes) - 1e-9)
    ranked = sorted(stats.sizes.items(), key=lambda kv: (-kv[1], kv[0]))
    return {u for u, _ in ranked[:n]}


def _pearson(x: np.ndarray, y: np.ndarray) -> float | None:
    if len(x) < 2:
        return None
    dx = x - x.mean()
    dy = y - y.mean()
    denom = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if denom == 0:
        return None
    return max(-1.0, min(1.0, float(dx @ dy) / denom))


def item_rating_means(dataset: RatingDataset, subset: set[str] | None = None) -> np.ndarray:
    """Per item-index average rating within the user restriction (NaN if unrated)."""
    mask = np.ones(len(dataset), dtype=bool)
    if subset is not None:
        keep = np.array([u in subset for u in dataset.user_ids], dtype=bool)
        mask = keep[dataset.user_idx]
    n = len(dataset.item_ids)
    sums = np.bincount(dataset.item_idx[mask], weights=dataset.ratings[mask], minlength=n)
    cnts = np.bincount(dataset.item_idx[mask], minlength=n)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(cnts > 0, sums / np.maximum(cnts, 1), np.nan)


def rating_popularity_correlation(
    dataset: RatingDataset, subset: set[str] | None = None
) -> float | None:
    """Pearson correlation across items of average rating vs popularity count.

    Averages use only the ratings of users in ``subset`` (all users if None);
    popularity always counts the full dataset. Returns None when undefined.
    """
    if len(dataset) == 0:
        raise DataError("empty dataset")
    means = item_rating_means(dataset, subset)
    counts = _item_counts(dataset).astype(np.float64)
    ok = ~np.isnan(means)
    return _pearson(means[ok], counts[ok])


# --- long-tail skeleton generator ----------------------------------------


def _zipf_weights(n: int, exponent: float) -> np.ndarray:
    w = np.arange(1, n + 1, dtype=np.float64) ** (-exponent)
    return w / w.sum()


def generate_longtail_skeleton(
    num_users: int,
    num_items: int,
    num_interactions: int,
    exponent: float = 1.0,
    seed: int = 0,
) -> InteractionSkeleton:
    """Sample a duplicate-free skeleton with power-law user and item activity.

    Users and items are drawn independently with probability proportional to
    ``rank ** -exponent``; the rank-to-id assignment is itself shuffled so ids
    carry no popularity information. Every user, then every still-unseen item,
    first receives one interaction; the rest are filled by rejection sampling.
    Uses numpy's PCG64 generator.
    """
    if num_users < 1 or num_items < 1:
        raise DataError("need at least one user and one item")
    if exponent <= 0:
        raise DataError(f"exponent must be positive, got {exponent}")
    if num_interactions < max(num_users, num_items):
        raise DataError(
            f"{num_interactions} interactions cannot cover {num_users} users and {num_items} items"
        )
    if num_interactions > num_users * num_items:
        raise DataError(
            f"{num_interactions} interactions exceed the {num_users * num_items} possible pairs"
        )

    rng = np.random.Generator(np.random.PCG64(seed))
    pu = _zipf_weights(num_users, exponent)
    pi = _zipf_weights(num_items, exponent)
    user_of_rank = rng.permutation(num_users)
    item_of_rank = rng.permutation(num_items)

    taken: set[int] = set()
    codes: list[int] = []

    def add(u: int, i: int) -> bool:
        c = u * num_items + i
        if c in taken:
            return False
        taken.add(c)
        codes.append(c)
        return True

    covered = np.zeros(num_items, dtype=bool)
    for u in range(num_users):
        i = int(rng.choice(num_items, p=pi))
        # under a tight budget, a repeat item would leave too few interactions
        # to cover the remaining items; draw among the uncovered ones instead
        uncovered = num_items - int(covered.sum()) - (0 if covered[i] else 1)
        if num_users + max(0, uncovered - (num_users - u - 1)) > num_interactions:
            free = np.flatnonzero(~covered)
            w = pi[free]
            i = int(free[rng.choice(len(free), p=w / w.sum())])
        add(u, i)
        covered[i] = True
    for i in np.flatnonzero(~covered):
        while not add(int(rng.choice(num_users, p=pu)), int(i)):
            pass

    remaining = num_interactions - len(codes)
    accept = 1.0
    while remaining > 0:
        batch = int(min(10_000_000, max(1024, 1.2 * remaining / max(accept, 1e-3))))
        us = rng.choice(num_users, size=batch, p=pu)
        its = rng.choice(num_items, size=batch, p=pi)
        added = 0
        for u, i in zip(us.tolist(), its.tolist()):
            if add(u, i):
                added += 1
                remaining -= 1
                if remaining == 0:
                    break
        accept = max(added / batch, 1e-6)

    arr = np.asarray(codes, dtype=np.int64)
    users = user_of_rank[arr // num_items]
    items = item_of_rank[arr % num_items]
    uw = len(str(num_users - 1))
    iw = len(str(num_items - 1))
    uname = [f"u{k:0{uw}d}" for k in range(num_users)]
    iname = [f"i{k:0{iw}d}" for k in range(num_items)]
    return InteractionSkeleton.from_pairs(zip((uname[u] for u in users), (iname[i] for i in items)))


# --- per-user holdout ----------------------------------------------------


def holdout_count(profile_size: int, frac: float) -> int:
    """Nearest-integer share of a profile, at least 1 and never the whole profile.

    Profiles of a single rating are never held out.
    """
    if profile_size < 2:
        return 0
    n = math.floor(frac * profile_size + 0.5)
    return min(max(n, 1), profile_size - 1)


def holdout_mask(
    data: RatingDataset, users: np.ndarray, frac: float, rng: np.random.Generator
) -> np.ndarray:
    """Boolean mask over ``data`` holding out ``frac`` of each listed user's ratings.

    ``users`` are user indices, visited in ascending order so the draws made
    from ``rng`` do not depend on the caller's ordering.
    """
    mask = np.zeros(len(data), dtype=bool)
    starts = np.searchsorted(data.user_idx, np.arange(len(data.user_ids) + 1))
    for u in np.sort(np.asarray(users, dtype=np.int64)):
        lo, hi = starts[u], starts[u + 1]
        n = holdout_count(int(hi - lo), frac)
        if n:
            mask[lo + rng.choice(hi - lo, size=n, replace=False)] = True
    return mask
