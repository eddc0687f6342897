import itertools
from collections import Counter
from math import factorial

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from poldec.enumeration import (
    EnumerationCapExceeded,
    count_decompositions,
    enumerate_all,
    prufer_to_parents,
    sample_uniform,
    set_partitions,
    stirling2,
    surjections,
)
from poldec.input_tree import validate


def _brute_surjections(a, b):
    return sum(1 for f in itertools.product(range(b), repeat=a) if len(set(f)) == b)


@given(a=st.integers(0, 6), b=st.integers(0, 5))
def test_surjections_match_brute_force(a, b):
    assert surjections(a, b) == _brute_surjections(a, b)


def test_surjection_examples():
    assert surjections(3, 2) == 6
    assert all(surjections(a, 1) == 1 for a in range(1, 8))
    assert all(surjections(a, a) == factorial(a) for a in range(0, 8))
    assert surjections(0, 0) == 1
    assert surjections(2, 3) == 0
    assert surjections(3, 0) == 0


def test_stirling_numbers():
    assert [stirling2(4, k) for k in range(1, 5)] == [1, 7, 6, 1]


@pytest.mark.parametrize("items,blocks", [(3, 2), (4, 2), (5, 3)])
def test_set_partitions_counts(items, blocks):
    parts = list(set_partitions(list(range(items)), blocks))
    assert len(parts) == stirling2(items, blocks)
    canon = {tuple(sorted(tuple(sorted(b)) for b in p)) for p in parts}
    assert len(canon) == len(parts)


def test_small_counts():
    assert count_decompositions(1, 2).total == 2
    assert count_decompositions(2, 2).total == 8


def test_count_rejects_single_input():
    with pytest.raises(ValueError):
        count_decompositions(3, 1)


def test_count_table_sums():
    c = count_decompositions(4, 3)
    assert c.total == sum(c.per_r_k.values())
    assert all(v >= 0 for v in c.per_r_k.values())
    assert sum(c.per_r().values()) == c.total


@pytest.mark.parametrize("n,m", [(n, m) for n in range(1, 5) for m in (2, 3)] + [(3, 4)])
def test_formula_matches_enumeration(n, m):
    trees = list(enumerate_all(n, m))
    assert len(trees) == count_decompositions(n, m).total
    assert len({t.key for t in trees}) == len(trees)
    assert all(validate(t)[0] for t in trees)


def test_formula_matches_enumeration_4x4():
    total = count_decompositions(4, 4).total
    assert sum(1 for _ in enumerate_all(4, 4)) == total


def test_enumerate_1x2_are_cascades():
    trees = list(enumerate_all(1, 2))
    assert len(trees) == 2
    for t in trees:
        assert t.n_nodes == 2
        assert sum(nd.parent is not None for nd in t.nodes) == 1


def test_enumeration_cap():
    with pytest.raises(EnumerationCapExceeded) as err:
        enumerate_all(6, 4, cap=100)
    assert err.value.count == count_decompositions(6, 4).total


def test_prufer_decoding_gives_forest():
    r = 4
    for code in itertools.product(range(r + 1), repeat=r - 1):
        parents = prufer_to_parents(code, r)
        assert len(parents) == r
        inner = {c for c in code if c < r}
        has_kids = {p for p in parents if p is not None}
        assert has_kids == inner


def test_sampling_uniform_2x2():
    rng = np.random.default_rng(1)
    trees = list(enumerate_all(2, 2))
    counts = Counter(sample_uniform(2, 2, rng).key for _ in range(8000))
    sigma = np.sqrt(8000 * (1 / 8) * (7 / 8))
    for t in trees:
        assert abs(counts[t.key] - 1000) <= 3 * sigma
    chi2 = sum((counts[t.key] - 1000) ** 2 / 1000 for t in trees)
    assert chi2 < stats.chi2.ppf(0.999, df=7)


def test_sampling_uniform_2x3():
    rng = np.random.default_rng(2)
    trees = list(enumerate_all(2, 3))
    draws = 5 * len(trees) * 20
    counts = Counter(sample_uniform(2, 3, rng).key for _ in range(draws))
    assert set(counts) == {t.key for t in trees}
    expect = draws / len(trees)
    chi2 = sum((counts[t.key] - expect) ** 2 / expect for t in trees)
    assert chi2 < stats.chi2.ppf(0.999, df=len(trees) - 1)


def test_sampling_1x2_only_cascades():
    rng = np.random.default_rng(3)
    counts = Counter(sample_uniform(1, 2, rng).key for _ in range(2000))
    assert set(counts) == {t.key for t in enumerate_all(1, 2)}
    assert all(abs(c - 1000) < 150 for c in counts.values())


def test_sampling_deterministic():
    a = [sample_uniform(5, 4, np.random.default_rng(9)).key for _ in range(1)]
    r1, r2 = np.random.default_rng(11), np.random.default_rng(11)
    assert [sample_uniform(5, 4, r1) for _ in range(50)] == [sample_uniform(5, 4, r2) for _ in range(50)]
    assert a


@given(n=st.integers(1, 12), m=st.integers(2, 6), seed=st.integers(0, 2**32 - 1))
def test_samples_are_valid(n, m, seed):
    assert validate(sample_uniform(n, m, np.random.default_rng(seed)))[0]
