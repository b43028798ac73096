import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from popbias.data import (
    DataError,
    InteractionSkeleton,
    ItemPopularity,
    ProfileStats,
    RatingDataset,
    format_interactions,
    generate_longtail_skeleton,
    holdout_count,
    item_popularity,
    load_interactions,
    load_ratings,
    normalize_popularity,
    profile_stats,
    rating_popularity_correlation,
    top_profile_users,
)


def write(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


# --- ingestion ---------------------------------------------------------------


def test_load_three_interactions(tmp_path):
    sk = load_interactions(write(tmp_path, "user,item\nu1,i1\nu2,i1\nu1,i2\n"))
    assert len(sk) == 3
    assert sk.n_users == 2 and sk.n_items == 2


def test_load_ignores_rating_column(tmp_path):
    sk = load_interactions(write(tmp_path, "user,item,rating\nu1,i1,4\nu2,i1,7\n"))
    assert sk.pairs() == [("u1", "i1"), ("u2", "i1")]


def test_duplicate_pair_is_named(tmp_path):
    with pytest.raises(DataError, match="u1.*i1"):
        load_interactions(write(tmp_path, "user,item\nu1,i1\nu2,i1\nu1,i1\n"))


def test_empty_file(tmp_path):
    with pytest.raises(DataError):
        load_interactions(write(tmp_path, ""))
    with pytest.raises(DataError):
        load_interactions(write(tmp_path, "user,item\n"))


def test_malformed_line_reports_line_number(tmp_path):
    with pytest.raises(DataError, match="line 3"):
        load_interactions(write(tmp_path, "user,item\nu1,i1\nbroken\n"))


def test_ratings_out_of_scale(tmp_path):
    with pytest.raises(DataError):
        load_ratings(write(tmp_path, "user,item,rating\nu1,i1,11\n"))
    with pytest.raises(DataError):
        load_ratings(write(tmp_path, "user,item,rating\nu1,i1,x\n"))


def test_ratings_roundtrip(tmp_path):
    ds = RatingDataset.from_triples([("b", "x", 3), ("a", "y", 10), ("a", "x", 1)])
    back = load_ratings(write(tmp_path, format_interactions(ds)))
    assert back == ds
    assert back.triples() == [("a", "x", 1), ("a", "y", 10), ("b", "x", 3)]


def test_canonical_order_independent_of_input_order():
    pairs = [("u2", "i1"), ("u1", "i2"), ("u1", "i1")]
    assert InteractionSkeleton.from_pairs(pairs) == InteractionSkeleton.from_pairs(pairs[::-1])


# --- popularity and profiles ---------------------------------------------------


def test_item_popularity_example():
    pop = item_popularity(InteractionSkeleton.from_pairs([("u1", "i1"), ("u2", "i1"), ("u1", "i2")]))
    assert dict(pop.counts) == {"i1": 2, "i2": 1}
    assert dict(pop.fractions) == {"i1": 1.0, "i2": 0.5}


def test_normalize_examples():
    pop = ItemPopularity({"a": 1, "b": 5, "c": 9}, 10)
    assert normalize_popularity(pop) == {"a": 1.0, "b": 5.5, "c": 10.0}
    assert normalize_popularity(pop, invert=True) == {"a": 10.0, "b": 5.5, "c": 1.0}
    flat = ItemPopularity({"a": 3, "b": 3}, 10)
    assert set(normalize_popularity(flat).values()) == {1.0}
    assert set(normalize_popularity(flat, invert=True).values()) == {10.0}


@given(st.dictionaries(st.text("abcdef", min_size=1, max_size=3), st.integers(1, 50), min_size=1))
def test_normalize_monotone(counts):
    pop = ItemPopularity(counts, 50)
    n, inv = normalize_popularity(pop), normalize_popularity(pop, invert=True)
    for a in counts:
        assert 1.0 <= n[a] <= 10.0
        for b in counts:
            if counts[a] >= counts[b]:
                assert n[a] >= n[b]
                assert inv[a] <= inv[b]


def test_top_profile_distinct_sizes():
    stats = ProfileStats({f"u{k}": k + 1 for k in range(10)})
    assert top_profile_users(stats, 0.2) == {"u9", "u8"}
    assert top_profile_users(stats, 1.0) == set(stats.sizes)


def test_top_profile_tie_at_cutoff():
    sizes = {f"u{k}": 1 for k in range(10)}
    sizes["u5"] = 9
    sizes["u7"] = 5
    sizes["u2"] = 5
    assert top_profile_users(ProfileStats(sizes), 0.2) == {"u5", "u2"}


@pytest.mark.parametrize("fraction", [0.0, -0.1, 1.5])
def test_top_profile_fraction_out_of_range(fraction):
    with pytest.raises(ValueError):
        top_profile_users(ProfileStats({"a": 1}), fraction)


@given(
    st.lists(st.integers(1, 6), min_size=1, max_size=30),
    st.floats(0.01, 1.0),
    st.randoms(use_true_random=False),
)
def test_top_profile_size_and_order_independence(sizes, fraction, rnd):
    items = [(f"u{k:02d}", s) for k, s in enumerate(sizes)]
    shuffled = items[:]
    rnd.shuffle(shuffled)
    a = top_profile_users(ProfileStats(dict(items)), fraction)
    b = top_profile_users(ProfileStats(dict(shuffled)), fraction)
    assert a == b
    assert len(a) == math.ceil(fraction * len(sizes) - 1e-9)


def test_profile_stats_sizes():
    ds = RatingDataset.from_triples([("a", "x", 1), ("a", "y", 2), ("b", "x", 3)])
    assert dict(profile_stats(ds).sizes) == {"a": 2, "b": 1}


# --- rating/popularity correlation ------------------------------------------------


def test_correlation_undefined_for_equal_means():
    ds = RatingDataset.from_triples([("a", "x", 5), ("b", "x", 5), ("a", "y", 5)])
    assert rating_popularity_correlation(ds) is None


def test_correlation_matches_numpy():
    triples = [("a", "x", 9), ("b", "x", 7), ("c", "x", 8), ("a", "y", 4), ("b", "y", 6), ("c", "z", 2)]
    ds = RatingDataset.from_triples(triples)
    expected = np.corrcoef([8.0, 5.0, 2.0], [3, 2, 1])[0, 1]
    assert rating_popularity_correlation(ds) == pytest.approx(expected, abs=1e-12)
    # restricted to user a: means x=9, y=4; counts still from all users
    expected_a = np.corrcoef([9.0, 4.0], [3, 2])[0, 1]
    assert rating_popularity_correlation(ds, {"a"}) == pytest.approx(expected_a)


@settings(max_examples=40)
@given(st.integers(0, 10_000))
def test_correlation_invariant_under_relabeling(seed):
    rng = np.random.default_rng(seed)
    triples = [
        (f"u{u}", f"i{i}", int(rng.integers(1, 11)))
        for u in range(6)
        for i in range(5)
        if rng.random() < 0.6
    ]
    if not triples:
        return
    perm_u = {f"u{u}": f"v{p}" for u, p in enumerate(rng.permutation(6))}
    perm_i = {f"i{i}": f"j{p}" for i, p in enumerate(rng.permutation(5))}
    relabeled = [(perm_u[u], perm_i[i], r) for u, i, r in triples]
    a = rating_popularity_correlation(RatingDataset.from_triples(triples))
    b = rating_popularity_correlation(RatingDataset.from_triples(relabeled))
    if a is None:
        assert b is None
    else:
        assert b == pytest.approx(a, abs=1e-12)


# --- skeleton generator ---------------------------------------------------------------


def test_generator_deterministic():
    a = generate_longtail_skeleton(100, 80, 1000, 1.0, seed=42)
    b = generate_longtail_skeleton(100, 80, 1000, 1.0, seed=42)
    assert a == b
    assert a != generate_longtail_skeleton(100, 80, 1000, 1.0, seed=43)


@pytest.mark.parametrize(
    "args",
    [(10, 10, 200), (10, 10, 5), (20, 10, 15), (0, 10, 10), (10, 10, 10, 0.0)],
)
def test_generator_infeasible(args):
    with pytest.raises(DataError):
        generate_longtail_skeleton(*args)


def test_generator_full_matrix():
    sk = generate_longtail_skeleton(6, 5, 30, 1.0, seed=1)
    assert len(sk) == 30 and sk.n_users == 6 and sk.n_items == 5


def test_generator_top_decile_share():
    sk = generate_longtail_skeleton(500, 1000, 10_000, 1.0, seed=3)
    counts = np.sort(np.bincount(sk.item_idx))[::-1]
    assert counts[:100].sum() == 5038  # frozen regression value
    assert counts[:100].sum() / len(sk) > 0.4


def test_generator_reference_long_tail():
    sk = generate_longtail_skeleton(2000, 1500, 50_000, 1.0, seed=7)
    counts = np.bincount(sk.item_idx, minlength=1500)
    assert np.median(counts) == 15.0  # frozen regression value
    assert counts.mean() == pytest.approx(50_000 / 1500)
    assert np.median(counts) < counts.mean()


@settings(max_examples=25, deadline=None)
@given(
    st.integers(1, 30),
    st.integers(1, 30),
    st.floats(0.3, 2.0),
    st.integers(0, 2**31),
    st.data(),
)
def test_generator_invariants(nu, ni, exponent, seed, data):
    lo = max(nu, ni)
    n = data.draw(st.integers(lo, nu * ni))
    sk = generate_longtail_skeleton(nu, ni, n, exponent, seed)
    assert len(sk) == n
    assert len(set(sk.pairs())) == n
    assert sk.n_users == nu and sk.n_items == ni
    assert sum(item_popularity(sk).counts.values()) == n


# --- holdout rounding -----------------------------------------------------------------


@pytest.mark.parametrize(
    "size,expected", [(1, 0), (2, 1), (3, 1), (5, 1), (7, 1), (8, 2), (10, 2), (13, 3)]
)
def test_holdout_count(size, expected):
    assert holdout_count(size, 0.2) == expected
