from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rarebranch.coverage import (
    MAP_SIZE,
    GlobalCoverage,
    RarityState,
    bucketize,
    bucketize_array,
    signature,
    signature_branches,
    transition_id,
)

# (low, high) of each bucket, written out independently of the module
BUCKETS = [(1, 1), (2, 2), (3, 3), (4, 7), (8, 15), (16, 31), (32, 127), (128, 2**32 - 1)]


def oracle_bucket(count: int) -> int:
    for k, (lo, hi) in enumerate(BUCKETS):
        if lo <= count <= hi:
            return k
    raise AssertionError(count)


@pytest.mark.parametrize(
    ("a", "b", "expected"),
    [
        (0, 0, 0),
        (2, 3, 2),  # (2>>1)^3
        (3, 2, 3),  # (3>>1)^2
        (0xFFFF, 0, 0x7FFF),
        (0, 0x1234, 0x1234),
        (0x10000, 1, (0x8000 ^ 1)),
    ],
)
def test_transition_id_values(a, b, expected):
    assert transition_id(a, b) == expected


def test_transition_id_is_directional():
    assert transition_id(2, 3) != transition_id(3, 2)


@pytest.mark.parametrize(
    ("count", "bucket"),
    [(1, 0), (2, 1), (3, 2), (4, 3), (7, 3), (8, 4), (15, 4), (16, 5), (31, 5), (32, 6), (127, 6),
     (128, 7), (2**31, 7), (2**32 - 1, 7)],
)
def test_bucket_boundaries(count, bucket):
    assert bucketize(count) == bucket


@pytest.mark.parametrize("count", [0, -1])
def test_bucketize_rejects_non_positive(count):
    with pytest.raises(ValueError):
        bucketize(count)


def test_bucketize_monotone_and_vectorised():
    counts = np.arange(1, 5000)
    b = bucketize_array(counts)
    assert np.all(np.diff(b) >= 0)
    assert b.tolist() == [oracle_bucket(int(c)) for c in counts]


def test_signature_of_dense_map():
    m = np.zeros(MAP_SIZE, dtype=np.uint32)
    m[5] = 17
    m[9] = 1
    assert signature(m) == frozenset({(5, 5), (9, 0)})
    assert signature_branches(signature(m)).tolist() == [5, 9]


def test_observe_new_then_duplicate():
    g = GlobalCoverage()
    assert g.observe({(5, 0), (6, 1)})
    assert g.branch_count == 2
    assert not g.observe({(5, 0)})
    assert g.observe({(5, 3)})
    assert g.branch_count == 2
    assert g.pair_count == 3
    assert g.seen == {(5, 0), (6, 1), (5, 3)}


def test_observe_replay_changes_nothing():
    g = GlobalCoverage()
    sig = {(1, 0), (2, 7)}
    g.observe(sig)
    before = g.fingerprint()
    assert not g.observe(sig)
    assert g.fingerprint() == before


@pytest.mark.parametrize(
    ("maps", "expected"),
    [
        ([{5: 17}], {5: 1}),
        ([{5: 1}, {5: 4}], {5: 2}),
        ([{3: 2, 5: 9}], {3: 1, 5: 1}),
    ],
)
def test_record_input_hits_once_per_input(maps, expected):
    r = RarityState()
    for m in maps:
        dense = np.zeros(MAP_SIZE, dtype=np.uint32)
        for k, v in m.items():
            dense[k] = v
        r.record_input_hits(dense)
    got = {int(b): int(r.input_hits[b]) for b in np.flatnonzero(r.input_hits)}
    assert got == expected


_pairs = st.tuples(st.integers(0, 40), st.integers(0, 7))
_sigs = st.lists(st.frozensets(_pairs, min_size=1, max_size=6), min_size=1, max_size=5)


@settings(max_examples=100, deadline=None)
@given(_sigs, st.randoms())
def test_branch_count_is_order_robust(sigs, rnd):
    counts = set()
    orders = list(itertools.permutations(range(len(sigs))))
    for order in rnd.sample(orders, min(len(orders), 6)):
        g = GlobalCoverage()
        for i in order:
            g.observe(sigs[i])
        counts.add((g.branch_count, g.pair_count))
    assert len(counts) == 1
