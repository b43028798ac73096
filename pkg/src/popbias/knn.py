"""User-based k-nearest-neighbour collaborative filtering.

The recommender is parameterised along four axes (:class:`KnnConfig`):

* ``min_sim`` -- neighbours must have similarity strictly above this value;
* ``over_common`` -- cosine over co-rated items only, or over the full
  (zero-filled) rating vectors;
* ``min_nbrs`` -- an item is only scored when at least this many eligible
  neighbours rated it;
* ``k`` -- at most this many neighbours (the most similar raters of the
  target item) contribute to a score.

Similarity is the cosine of mean-centered rating vectors and predictions are
``mean(u) + sum(s * (r - mean(v))) / sum(|s|)`` over the neighbourhood.
Raters with zero similarity carry no weight in that formula and are never
counted as neighbours, whatever ``min_sim`` is.

Two code paths exist. The per-pair functions (:func:`similarity`,
:func:`neighbourhood`, :func:`predict`) follow the definitions literally. The
batch path (:func:`similarity_rows`, :func:`score_users`) computes whole
similarity rows with sparse products and aggregates neighbour ratings for
every item at once in a compiled loop; it is what the recommender and the
experiment runner use.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np
import scipy.sparse as sp

from .data import RatingDataset, holdout_mask
from .metrics import rmse


# below this magnitude a similarity is treated as exactly zero
ZERO_SIM = 1e-10
# similarities are rounded to this many decimals so that ties which are exact
# in real arithmetic stay exact regardless of summation order
SIM_DECIMALS = 12


class UnknownIdError(KeyError):
    """A user or item that the fitted model has no training data for."""


@dataclass(frozen=True)
class KnnConfig:
    min_sim: float = 0.0
    over_common: bool = False
    min_nbrs: int = 1
    k: int = 20

    def __post_init__(self):
        if not -1.0 <= self.min_sim <= 1.0:
            raise ValueError(f"min_sim must be in [-1, 1], got {self.min_sim}")
        if self.min_nbrs < 1:
            raise ValueError(f"min_nbrs must be >= 1, got {self.min_nbrs}")
        if self.k < self.min_nbrs:
            raise ValueError(f"k={self.k} is smaller than min_nbrs={self.min_nbrs}")

    def with_k(self, k: int) -> "KnnConfig":
        return KnnConfig(self.min_sim, self.over_common, self.min_nbrs, k)


@dataclass(frozen=True)
class Prediction:
    user: str
    item: str
    score: float
    neighbours_used: int


@dataclass(frozen=True, eq=False)
class FittedModel:
    """Trained state over the training dataset's user/item index space.

    ``centered`` is users x items CSR holding ``r(u, i) - mean(u)`` with explicit
    zeros kept, so its sparsity pattern is exactly the set of training ratings.
    """

    config: KnnConfig
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    user_means: np.ndarray
    centered: sp.csr_matrix
    item_raters: sp.csc_matrix
    catalog: np.ndarray

    def user_index(self, user: str) -> int:
        u = _lookup(self.user_ids, user)
        if u is None or math.isnan(self.user_means[u]):
            raise UnknownIdError(f"user {user!r} has no training ratings")
        return u

    def item_index(self, item: str) -> int:
        i = _lookup(self.item_ids, item)
        if i is None or not self.catalog[i]:
            raise UnknownIdError(f"item {item!r} is not in the training catalog")
        return i

    def has_user(self, u: int) -> bool:
        return not math.isnan(self.user_means[u])

    def rated(self, u: int) -> np.ndarray:
        c = self.centered
        return c.indices[c.indptr[u] : c.indptr[u + 1]]


def _lookup(ids: tuple[str, ...], key: str) -> int | None:
    k = bisect.bisect_left(ids, key)
    return k if k < len(ids) and ids[k] == key else None


def fit(train: RatingDataset, config: KnnConfig) -> FittedModel:
    if len(train) == 0:
        raise ValueError("cannot fit on empty training data")
    n_users, n_items = len(train.user_ids), len(train.item_ids)
    u, i = np.asarray(train.user_idx), np.asarray(train.item_idx)
    r = np.asarray(train.ratings, dtype=np.float64)

    counts = np.bincount(u, minlength=n_users)
    sums = np.bincount(u, weights=r, minlength=n_users)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)

    # triples are in canonical (user, item) order, so CSR can be built directly
    indptr = np.concatenate([[0], np.cumsum(counts)])
    centered = sp.csr_matrix((r - means[u], i.copy(), indptr), shape=(n_users, n_items))
    raters = centered.tocsc()
    catalog = np.bincount(i, minlength=n_items) > 0

    means.setflags(write=False)
    catalog.setflags(write=False)
    return FittedModel(config, train.user_ids, train.item_ids, means, centered, raters, catalog)


# --- per-pair reference path -----------------------------------------------


def _row(model: FittedModel, u: int) -> dict[int, float]:
    c = model.centered
    lo, hi = c.indptr[u], c.indptr[u + 1]
    return dict(zip(c.indices[lo:hi].tolist(), c.data[lo:hi].tolist()))


def _cosine(a: dict[int, float], b: dict[int, float], over_common: bool) -> float:
    if over_common:
        common = a.keys() & b.keys()
        if not common:
            return 0.0
        dot = sum(a[i] * b[i] for i in common)
        na = sum(a[i] * a[i] for i in common)
        nb = sum(b[i] * b[i] for i in common)
    else:
        dot = sum(x * b[i] for i, x in a.items() if i in b)
        na = sum(x * x for x in a.values())
        nb = sum(x * x for x in b.values())
    if na == 0 or nb == 0:
        return 0.0
    return max(-1.0, min(1.0, round(dot / math.sqrt(na * nb), SIM_DECIMALS)))


def similarity(model: FittedModel, u: str, v: str) -> float:
    """Cosine similarity of two users' mean-centered rating vectors."""
    a, b = model.user_index(u), model.user_index(v)
    return _cosine(_row(model, a), _row(model, b), model.config.over_common)


def neighbourhood(model: FittedModel, u: str, i: str) -> list[tuple[str, float]]:
    """Raters of ``i`` (other than ``u``) above ``min_sim``, most similar first, capped at k."""
    a = model.user_index(u)
    ii = _lookup(model.item_ids, i)
    if ii is None or not model.catalog[ii]:
        return []
    cfg = model.config
    ra = _row(model, a)
    col = model.item_raters
    cands = []
    for v in col.indices[col.indptr[ii] : col.indptr[ii + 1]].tolist():
        if v == a:
            continue
        s = _cosine(ra, _row(model, v), cfg.over_common)
        if s > cfg.min_sim and abs(s) >= ZERO_SIM:
            cands.append((v, s))
    cands.sort(key=lambda vs: (-vs[1], vs[0]))
    return [(model.user_ids[v], s) for v, s in cands[: cfg.k]]


def predict(model: FittedModel, u: str, i: str) -> Prediction | None:
    """Weighted mean-centered prediction, or None if too few neighbours rated ``i``."""
    model.user_index(u)
    ii = model.item_index(i)
    nbrs = neighbourhood(model, u, i)
    if len(nbrs) < model.config.min_nbrs:
        return None
    num = den = 0.0
    for v, s in nbrs:
        vi = model.user_index(v)
        num += s * _row(model, vi)[ii]
        den += abs(s)
    if den == 0:
        return None
    return Prediction(u, i, float(model.user_means[model.user_index(u)] + num / den), len(nbrs))


# --- batch path --------------------------------------------------------------


def similarity_rows(model: FittedModel, rows: np.ndarray) -> np.ndarray:
    """Dense ``len(rows) x n_users`` block of user-user similarities."""
    rows = np.asarray(rows, dtype=np.int64)
    c = model.centered
    cr = c[rows]
    dot = (cr @ c.T).toarray()
    if model.config.over_common:
        sq = c.multiply(c).tocsr()
        ind = c.copy()
        ind.data = np.ones_like(ind.data)
        nu = (sq[rows] @ ind.T).toarray()
        nv = (ind[rows] @ sq.T).toarray()
        denom = np.sqrt(nu * nv)
    else:
        norms = np.sqrt(np.asarray(c.multiply(c).sum(axis=1)).ravel())
        denom = np.outer(norms[rows], norms)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(denom > 0, dot / np.where(denom > 0, denom, 1.0), 0.0)
    return np.clip(np.round(s, SIM_DECIMALS), -1.0, 1.0)


@numba.njit(cache=True)
def _aggregate(rows, sims, order, min_sim, k, zero, indptr, indices, data, num, den, cnt):
    for r in range(rows.shape[0]):
        u = rows[r]
        for j in order[r]:
            s = sims[r, j]
            if not s > min_sim:
                break
            a = abs(s)
            if j == u or a < zero:
                continue
            for p in range(indptr[j], indptr[j + 1]):
                it = indices[p]
                if cnt[r, it] < k:
                    cnt[r, it] += 1
                    num[r, it] += s * data[p]
                    den[r, it] += a


class NeighbourScorer:
    """Scores every item for a fixed block of users, reusable across k values."""

    def __init__(self, model: FittedModel, rows: Sequence[int]):
        self.model = model
        self.rows = np.asarray(rows, dtype=np.int64)
        self.sims = similarity_rows(model, self.rows)
        # stable sort keeps ascending user index among equal similarities
        self.order = np.argsort(-self.sims, axis=1, kind="stable")

    def scores(self, k: int | None = None, min_nbrs: int | None = None):
        """Return ``(scores, counts)``; unscorable entries of ``scores`` are NaN."""
        cfg = self.model.config
        k = cfg.k if k is None else k
        min_nbrs = cfg.min_nbrs if min_nbrs is None else min_nbrs
        shape = (len(self.rows), len(self.model.item_ids))
        num = np.zeros(shape)
        den = np.zeros(shape)
        cnt = np.zeros(shape, dtype=np.int64)
        c = self.model.centered
        _aggregate(
            self.rows, self.sims, self.order, float(cfg.min_sim), int(k), ZERO_SIM,
            c.indptr.astype(np.int64), c.indices.astype(np.int64), c.data, num, den, cnt,
        )
        ok = (cnt >= min_nbrs) & (den > 0)
        with np.errstate(invalid="ignore", divide="ignore"):
            scores = np.where(ok, self.model.user_means[self.rows][:, None] + num / den, np.nan)
        return scores, cnt


def score_users(model: FittedModel, rows: Sequence[int], block: int = 256) -> np.ndarray:
    """Predicted scores for all items for the given user indices (NaN = no prediction)."""
    rows = np.asarray(rows, dtype=np.int64)
    out = np.full((len(rows), len(model.item_ids)), np.nan)
    for lo in range(0, len(rows), block):
        out[lo : lo + block] = NeighbourScorer(model, rows[lo : lo + block]).scores()[0]
    return out


def top_n_from_scores(model: FittedModel, u: int, scores: np.ndarray, n: int = 10) -> np.ndarray:
    """Item indices of the ``n`` best-scored unrated items (ties: lower item index first)."""
    s = scores.copy()
    s[model.rated(u)] = np.nan
    cand = np.flatnonzero(~np.isnan(s))
    if len(cand) == 0:
        return cand
    order = np.argsort(-s[cand], kind="stable")
    return cand[order[:n]]


def recommend_top_n(model: FittedModel, u: str, n: int = 10) -> list[str]:
    ui = _lookup(model.user_ids, u)
    if ui is None or not model.has_user(ui):
        return []
    scores = score_users(model, [ui])[0]
    return [model.item_ids[i] for i in top_n_from_scores(model, ui, scores, n)]


def recommend_batch(model: FittedModel, rows: Sequence[int], n: int = 10, block: int = 256):
    """Top-n item index arrays plus the full score block for each user index."""
    rows = np.asarray(rows, dtype=np.int64)
    recs, scores = [], []
    for lo in range(0, len(rows), block):
        blk = rows[lo : lo + block]
        sc = NeighbourScorer(model, blk).scores()[0]
        for r, u in enumerate(blk):
            recs.append(top_n_from_scores(model, int(u), sc[r], n))
        scores.append(sc)
    return recs, (np.vstack(scores) if scores else np.empty((0, len(model.item_ids))))


# --- tuning ------------------------------------------------------------------


def tune_k_scores(
    train: RatingDataset,
    config: KnnConfig,
    grid: Sequence[int],
    seed: int,
    holdout_frac: float = 0.2,
    block: int = 256,
) -> dict[int, float | None]:
    """Validation RMSE for each neighbourhood size on one seeded per-user split."""
    if not grid:
        raise ValueError("empty k grid")
    bad = [k for k in grid if k < config.min_nbrs]
    if bad:
        raise ValueError(f"grid values {bad} are below min_nbrs={config.min_nbrs}")
    rng = np.random.Generator(np.random.PCG64(seed))
    users = np.unique(train.user_idx)
    val = holdout_mask(train, users, holdout_frac, rng)
    model = fit(train.select(~val), config.with_k(max(grid)))

    vu = np.asarray(train.user_idx)[val]
    vi = np.asarray(train.item_idx)[val]
    truth = np.asarray(train.ratings, dtype=np.float64)[val]
    val_users = np.unique(vu)
    pos = np.searchsorted(val_users, vu)

    pairs: dict[int, list[np.ndarray]] = {k: [] for k in grid}
    for lo in range(0, len(val_users), block):
        blk = val_users[lo : lo + block]
        scorer = NeighbourScorer(model, blk)
        sel = (pos >= lo) & (pos < lo + len(blk))
        for k in sorted(set(grid)):
            s, _ = scorer.scores(k=k)
            pred = s[pos[sel] - lo, vi[sel]]
            ok = ~np.isnan(pred)
            pairs[k].append(np.column_stack([pred[ok], truth[sel][ok]]))
    return {k: rmse(np.vstack(pairs[k])) for k in grid}


def tune_k(train: RatingDataset, config: KnnConfig, grid: Sequence[int], seed: int) -> int:
    """Neighbourhood size from ``grid`` with the lowest validation RMSE (ties: smallest k)."""
    scores = tune_k_scores(train, config, grid, seed)
    return min(grid, key=lambda k: (math.inf if scores[k] is None else scores[k], k))
