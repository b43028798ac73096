"""Two-sided Mann-Whitney U test with midranks for ties."""

from __future__ import annotations

import itertools
import math
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

EXACT_MAX_N = 12


def _normal_p(u: float, ranks: np.ndarray, n_a: int, n_b: int) -> float:
    n = n_a + n_b
    _, ties = np.unique(ranks, return_counts=True)
    tie_term = float(np.sum(ties**3 - ties)) / (n * (n - 1)) if n > 1 else 0.0
    var = n_a * n_b / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return 1.0
    z = max(abs(u - n_a * n_b / 2.0) - 0.5, 0.0) / math.sqrt(var)
    return min(1.0, math.erfc(z / math.sqrt(2.0)))


def _exact_p(u: float, ranks: np.ndarray, n_a: int) -> float:
    """Permutation p-value: share of rank assignments at least as far from the mean."""
    n = len(ranks)
    mean = n_a * (n - n_a) / 2.0
    obs = abs(u - mean) - 1e-9
    offset = n_a * (n_a + 1) / 2.0
    hits = total = 0
    for comb in itertools.combinations(range(n), n_a):
        total += 1
        if abs(float(ranks[list(comb)].sum()) - offset - mean) >= obs:
            hits += 1
    return hits / total


def mann_whitney_u(
    a: Sequence[float], b: Sequence[float], method: str = "auto"
) -> tuple[float, float]:
    """Return ``(U, p)`` where U is the statistic of sample ``a``.

    ``method`` is ``"exact"`` (enumerate every assignment of the pooled
    midranks), ``"normal"`` (tie-corrected variance with continuity
    correction) or ``"auto"``, which is exact when the pooled size is at most
    12.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 1 or len(b) < 1:
        raise ValueError("both samples need at least one value")
    if method not in ("auto", "exact", "normal"):
        raise ValueError(f"unknown method {method!r}")
    ranks = rankdata(np.concatenate([a, b]))
    n_a, n_b = len(a), len(b)
    u = float(ranks[:n_a].sum()) - n_a * (n_a + 1) / 2.0
    if method == "exact" or (method == "auto" and n_a + n_b <= EXACT_MAX_N):
        return u, _exact_p(u, ranks, n_a)
    return u, _normal_p(u, ranks, n_a, n_b)
