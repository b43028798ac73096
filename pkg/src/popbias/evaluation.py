"""Cross-validated experiment grid: folds, per-cell evaluation and significance.

For every scenario the ratings are synthesized once and evaluated under every
UserKNN configuration on the same user folds. Within a fold, each test user
keeps 80% of their ratings for training and 20% are held out.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from . import knn
from .data import (
    InteractionSkeleton,
    RatingDataset,
    holdout_mask,
    item_popularity,
)
from .metrics import agg_div, arp, ndcg_at_k, pl, pop_corr, rmse
from .stats import mann_whitney_u
from .synth import ScenarioSpec, synthesize_ratings

log = logging.getLogger(__name__)

SIGNIFICANCE_LEVEL = 0.005
TOP_N = 10


@dataclass(frozen=True, eq=False)
class FoldPlan:
    """User-to-fold assignment plus one per-user holdout over canonical triples.

    A user is a test user in exactly one fold, so a single mask over the
    skeleton's interactions describes every fold's holdout.
    """

    n_folds: int
    seed: int
    user_ids: tuple[str, ...]
    assignments: np.ndarray
    holdout: np.ndarray
    triple_users: np.ndarray
    triple_items: np.ndarray

    def test_users(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def holdout_mask(self, fold: int) -> np.ndarray:
        return self.holdout & (self.assignments[self.triple_users] == fold)

    def fold_sizes(self) -> list[int]:
        return [int(np.sum(self.assignments == f)) for f in range(self.n_folds)]


def make_folds(
    data: RatingDataset | InteractionSkeleton,
    n_folds: int = 5,
    holdout_frac: float = 0.2,
    seed: int = 0,
) -> FoldPlan:
    """Deal seeded-shuffled users round-robin into folds and draw their holdouts.

    Depends only on the interaction structure, so datasets synthesized from
    the same skeleton share one plan.
    """
    if n_folds < 2:
        raise ValueError(f"need at least 2 folds, got {n_folds}")
    users = np.unique(data.user_idx)
    if n_folds > len(users):
        raise ValueError(f"{n_folds} folds for only {len(users)} users")
    rng = np.random.Generator(np.random.PCG64(seed))
    assignments = np.full(len(data.user_ids), -1, dtype=np.int64)
    assignments[rng.permutation(users)] = np.arange(len(users)) % n_folds
    mask = holdout_mask(data, users, holdout_frac, rng)
    for a in (assignments, mask):
        a.setflags(write=False)
    return FoldPlan(n_folds, seed, data.user_ids, assignments, mask, data.user_idx, data.item_idx)


@dataclass(frozen=True)
class GridConfig:
    """A grid entry: the three configuration axes plus a fixed k, or None to tune k."""

    min_sim: float
    over_common: bool
    min_nbrs: int
    k: int | None = None

    def resolve(self, k: int | None = None) -> knn.KnnConfig:
        k = self.k if k is None else k
        if k is None:
            raise ValueError("k must be fixed or tuned before resolving")
        return knn.KnnConfig(self.min_sim, self.over_common, self.min_nbrs, k)

    def label(self) -> str:
        k = "tuned" if self.k is None else str(self.k)
        return f"min_sim={self.min_sim:g} over_common={self.over_common} min_nbrs={self.min_nbrs} k={k}"


@dataclass
class MetricsRow:
    scenario_id: int
    min_sim: float
    over_common: bool
    min_nbrs: int
    k: int
    pop_corr: float
    arp: float | None
    pl: float | None
    agg_div: float
    rmse: float | None
    ndcg_at_10: float | None
    arp_sig_lower: bool = False
    pl_sig_lower: bool = False
    coverage: float = 0.0
    n_test_users: int = 0
    n_scored_users: int = 0
    n_cold_users: int = 0


@dataclass
class PerUserSamples:
    arp_per_user: dict[str, float] = field(default_factory=dict)
    pl_per_user: dict[str, float] = field(default_factory=dict)


@dataclass
class CellResult:
    row: MetricsRow
    samples: PerUserSamples
    tuning: dict[int, float | None] | None = None


@dataclass
class ExperimentResult:
    rows: list[MetricsRow]
    samples: list[PerUserSamples]
    tuning: list[dict[int, float | None] | None]
    failures: list[tuple[int, GridConfig, str]] = field(default_factory=list)


def _as_grid(c: knn.KnnConfig | GridConfig) -> GridConfig:
    if isinstance(c, GridConfig):
        return c
    return GridConfig(c.min_sim, c.over_common, c.min_nbrs, c.k)


def evaluate_config(
    dataset: RatingDataset,
    plan: FoldPlan,
    config: knn.KnnConfig,
    scenario_id: int = 0,
    n: int = TOP_N,
) -> CellResult:
    """Cross-validate one configuration on one dataset and pool the metrics."""
    user_ids, item_ids = dataset.user_ids, dataset.item_ids
    samples = PerUserSamples()
    pairs: list[np.ndarray] = []
    n_holdout = 0
    ndcgs: list[float] = []
    fold_corrs: list[float] = []
    all_lists: list[list[str]] = []
    n_test = n_cold = 0

    for f in range(plan.n_folds):
        test_mask = plan.holdout_mask(f)
        train = dataset.select(~test_mask)
        model = knn.fit(train, config)
        pop = item_popularity(train)

        tu = np.asarray(dataset.user_idx)[test_mask]
        ti = np.asarray(dataset.item_idx)[test_mask]
        tr = np.asarray(dataset.ratings)[test_mask]
        users = np.unique(tu)  # test users with a non-empty holdout
        n_test += len(users)
        warm = np.array([model.has_user(u) for u in users], dtype=bool)
        n_cold += int((~warm).sum())
        users = users[warm]
        if len(users) == 0:
            continue

        recs, scores = knn.recommend_batch(model, users, n=n)
        row_of = {int(u): r for r, u in enumerate(users)}

        keep = np.isin(tu, users)
        n_holdout += int(keep.sum())
        pred = scores[[row_of[int(u)] for u in tu[keep]], ti[keep]]
        ok = ~np.isnan(pred)
        pairs.append(np.column_stack([pred[ok], tr[keep][ok]]))

        rec_lists: dict[str, list[str]] = {}
        profiles: dict[str, list[str]] = {}
        for r, u in enumerate(users):
            uid = user_ids[u]
            items = [item_ids[i] for i in recs[r]]
            rec_lists[uid] = items
            profiles[uid] = [item_ids[i] for i in model.rated(int(u))]
            sel = tu == u
            holdout = {item_ids[i]: float(x) for i, x in zip(ti[sel], tr[sel])}
            ndcgs.append(ndcg_at_k(items, holdout, n))
        all_lists.extend(rec_lists.values())

        rec_counts: dict[str, int] = {}
        for items in rec_lists.values():
            for i in items:
                rec_counts[i] = rec_counts.get(i, 0) + 1
        fold_corrs.append(pop_corr(pop, rec_counts))

        if any(rec_lists.values()):
            _, a = arp(rec_lists, pop)
            _, p = pl(rec_lists, profiles, pop)
            samples.arp_per_user.update(a)
            samples.pl_per_user.update(p)

    catalog = [item_ids[i] for i in np.unique(dataset.item_idx)]
    all_pairs = np.vstack(pairs) if pairs else np.empty((0, 2))
    arp_vals = list(samples.arp_per_user.values())
    pl_vals = list(samples.pl_per_user.values())
    row = MetricsRow(
        scenario_id=scenario_id,
        min_sim=config.min_sim,
        over_common=config.over_common,
        min_nbrs=config.min_nbrs,
        k=config.k,
        pop_corr=float(np.mean(fold_corrs)) if fold_corrs else 0.0,
        arp=float(np.mean(arp_vals)) if arp_vals else None,
        pl=float(np.mean(pl_vals)) if pl_vals else None,
        agg_div=agg_div(all_lists, catalog),
        rmse=rmse(all_pairs),
        ndcg_at_10=float(np.mean(ndcgs)) if ndcgs else None,
        coverage=len(all_pairs) / n_holdout if n_holdout else 0.0,
        n_test_users=n_test,
        n_scored_users=len(samples.arp_per_user),
        n_cold_users=n_cold,
    )
    return CellResult(row, samples)


def mark_significance(rows: Sequence[MetricsRow], samples: Sequence[PerUserSamples]) -> None:
    """Flag rows whose ARP/PL is significantly below the scenario's highest mean.

    Each non-maximal row is compared once against the maximal row with a
    two-sided Mann-Whitney U test over per-user values.
    """
    by_scenario: dict[int, list[int]] = {}
    for idx, r in enumerate(rows):
        by_scenario.setdefault(r.scenario_id, []).append(idx)
    for metric, flag, key in (
        ("arp", "arp_sig_lower", "arp_per_user"),
        ("pl", "pl_sig_lower", "pl_per_user"),
    ):
        for idxs in by_scenario.values():
            valid = [j for j in idxs if getattr(rows[j], metric) is not None]
            if len(valid) < 2:
                continue
            best = max(valid, key=lambda j: getattr(rows[j], metric))
            ref = list(getattr(samples[best], key).values())
            for j in valid:
                if j == best:
                    continue
                if getattr(rows[j], metric) >= getattr(rows[best], metric):
                    continue
                _, p = mann_whitney_u(list(getattr(samples[j], key).values()), ref)
                setattr(rows[j], flag, p < SIGNIFICANCE_LEVEL)


def run_experiment(
    skeleton: InteractionSkeleton,
    scenarios: Sequence[ScenarioSpec],
    configs: Sequence[knn.KnnConfig | GridConfig],
    n_folds: int = 5,
    seed_folds: int = 0,
    seed_tune: int = 0,
    k_grid: Sequence[int] = (5, 10, 20, 40, 80),
    n: int = TOP_N,
    on_error: str = "raise",
    progress: Callable[[str], None] | None = None,
) -> ExperimentResult:
    """Evaluate every (scenario, config) cell.

    Configs without a fixed k are tuned on the scenario's full dataset by
    validation RMSE before cross-validation. With ``on_error="record"`` a
    failing cell is skipped and listed in ``failures`` instead of raising.
    """
    if not scenarios or not configs:
        raise ValueError("need at least one scenario and one config")
    grid = [_as_grid(c) for c in configs]
    plan = make_folds(skeleton, n_folds, seed=seed_folds)
    result = ExperimentResult([], [], [])

    for spec in scenarios:
        dataset = synthesize_ratings(skeleton, spec)
        first = len(result.rows)
        for gc in grid:
            try:
                tuning = None
                if gc.k is None:
                    base = gc.resolve(max(max(k_grid), gc.min_nbrs))
                    usable = [k for k in k_grid if k >= gc.min_nbrs]
                    tuning = knn.tune_k_scores(dataset, base, usable, seed_tune)
                    k = min(usable, key=lambda k: (math.inf if tuning[k] is None else tuning[k], k))
                    config = gc.resolve(k)
                else:
                    config = gc.resolve()
                cell = evaluate_config(dataset, plan, config, spec.scenario_id, n)
            except Exception as exc:
                if on_error == "raise":
                    raise
                log.error("scenario %d, %s failed: %s", spec.scenario_id, gc.label(), exc)
                result.failures.append((spec.scenario_id, gc, f"{type(exc).__name__}: {exc}"))
                continue
            result.rows.append(cell.row)
            result.samples.append(cell.samples)
            result.tuning.append(tuning)
            if progress:
                progress(f"scenario {spec.scenario_id} {gc.label()} -> k={config.k}")
        mark_significance(result.rows[first:], result.samples[first:])
    return result


# --- file formats ------------------------------------------------------------

RESULT_COLUMNS = [f.name for f in fields(MetricsRow)]


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_results(rows: Sequence[MetricsRow], manifest_hash: str = "") -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(RESULT_COLUMNS + ["manifest_hash"])
    for r in rows:
        d = asdict(r)
        w.writerow([_fmt(d[c]) for c in RESULT_COLUMNS] + [manifest_hash])
    return out.getvalue()


def format_samples(
    rows: Sequence[MetricsRow], samples: Sequence[PerUserSamples], manifest_hash: str = ""
) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["scenario_id", "min_sim", "over_common", "min_nbrs", "k", "user", "arp", "pl", "manifest_hash"])
    for r, s in zip(rows, samples):
        for u in sorted(s.arp_per_user):
            w.writerow(
                [_fmt(x) for x in (r.scenario_id, r.min_sim, r.over_common, r.min_nbrs, r.k, u,
                                   s.arp_per_user[u], s.pl_per_user.get(u))]
                + [manifest_hash]
            )
    return out.getvalue()


def parse_results(text: str) -> list[MetricsRow]:
    types = {f.name: f.type for f in fields(MetricsRow)}
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        kw = {}
        for name in RESULT_COLUMNS:
            raw = rec[name]
            t = str(types[name])
            if raw == "NA":
                kw[name] = None
            elif t.startswith("bool"):
                kw[name] = raw == "true"
            elif t.startswith("int"):
                kw[name] = int(raw)
            else:
                kw[name] = float(raw)
        rows.append(MetricsRow(**kw))
    return rows
