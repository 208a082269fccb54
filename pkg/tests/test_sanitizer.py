import itertools
import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from shrouddb.errors import DataError, ParameterError, QueryError
from shrouddb.sanitizer import (
    AggregateTree,
    PointHistogram,
    alpha_point,
    alpha_range,
    build_point_sanitizer,
    build_range_sanitizer,
    canonical_cover,
    compose,
    deserialize,
    laplace_sample,
    sanitizer_query,
    serialize,
    tree_nodes_count,
)

LN2 = math.log(2)
LN3 = math.log(3)


class MedianRng(random.Random):
    """random() pinned to 0.5: the inverse CDF returns the mean exactly."""

    def random(self):
        return 0.5


# -- parameter formulas (frozen against the closed forms) --------------------

def test_alpha_point_values():
    assert alpha_point(LN2, 2.0 ** -20, 10 ** 4) == 33
    assert alpha_point(1.0, 2.0 ** -20, 10 ** 4) == 23
    assert alpha_point(LN2, 0.5, 1) == 0


def test_alpha_point_guarantee_is_tight():
    # smallest integer a with (1 - exp(-a*eps)/2)^N >= 1 - beta
    for eps, beta, N in [(LN2, 2.0 ** -20, 10 ** 4), (1.0, 2.0 ** -20, 10 ** 4),
                         (0.25, 0.01, 333)]:
        a = alpha_point(eps, beta, N)
        holds = lambda x: (1 - math.exp(-x * eps) / 2) ** N >= 1 - beta
        assert holds(a)
        if a > 0:
            assert not holds(a - 1)


def test_tree_nodes_count_values():
    assert tree_nodes_count(16, 16) == 17
    assert tree_nodes_count(256, 16) == 273
    assert tree_nodes_count(4096, 16) == 4369
    assert tree_nodes_count(16, 4) == 21
    assert tree_nodes_count(1, 16) == 1


def test_tree_nodes_count_validation():
    with pytest.raises(ParameterError):
        tree_nodes_count(100, 16)  # not a power of the fanout
    with pytest.raises(ParameterError):
        tree_nodes_count(16, 1)
    with pytest.raises(ParameterError):
        tree_nodes_count(0, 2)


def test_alpha_range_values():
    assert alpha_range(LN2, 2.0 ** -20, 4096, 16) == 94
    assert alpha_range(LN3, 2.0 ** -20, 4096, 16) == 59
    assert alpha_range(LN2, 2.0 ** -20, 256, 16) == 55
    assert alpha_range(LN2, 0.5, 16, 16) == 4


def test_alpha_range_guarantee_is_tight():
    for eps, beta, N, k in [(LN2, 2.0 ** -20, 4096, 16), (LN3, 2.0 ** -20, 4096, 16)]:
        a = alpha_range(eps, beta, N, k)
        nodes = tree_nodes_count(N, k)
        h = round(math.log(N, k))
        holds = lambda x: (1 - math.exp(-x * eps / h) / 2) ** nodes >= 1 - beta
        assert holds(a)
        assert not holds(a - 1)


def test_alpha_range_needs_one_level():
    with pytest.raises(ParameterError):
        alpha_range(LN2, 0.5, 1, 16)


def test_parameter_validation():
    for bad in [0.0, -1.0]:
        with pytest.raises(ParameterError):
            alpha_point(bad, 0.5, 4)
    for bad in [0.0, 1.0, -0.5]:
        with pytest.raises(ParameterError):
            alpha_point(LN2, bad, 4)
    with pytest.raises(ParameterError):
        laplace_sample(0.0, 0.0, random.Random(1))


# -- the Laplace sampler ------------------------------------------------------

def test_laplace_median_is_mean():
    assert laplace_sample(5.0, 2.0, MedianRng()) == 5.0


def test_laplace_moments():
    r = random.Random(3)
    xs = [laplace_sample(0.0, 1.0, r) for _ in range(200_000)]
    assert sum(xs) / len(xs) == pytest.approx(0.0, abs=0.02)
    assert sum(x * x for x in xs) / len(xs) == pytest.approx(2.0, rel=0.05)


def test_laplace_deterministic_under_seed():
    a = [laplace_sample(0, 1, random.Random(9)) for _ in range(5)]
    b = [laplace_sample(0, 1, random.Random(9)) for _ in range(5)]
    assert a == b


# -- builders ----------------------------------------------------------------

def test_point_sanitizer_median_stub():
    ph = build_point_sanitizer([2, 2, 3], 4, LN2, 0.5, MedianRng())
    assert ph.params.alpha == 2
    assert ph.bins == [2, 2, 4, 3]  # true counts 0,0,2,1 plus alpha
    assert ph.clamped == 0


def test_point_sanitizer_rejects_out_of_domain():
    with pytest.raises(DataError):
        build_point_sanitizer([4], 4, LN2, 0.5, MedianRng())


def test_tree_sanitizer_median_stub():
    tr = build_range_sanitizer([0, 0, 1, 3], 4, 2, LN2, 0.5, MedianRng())
    a = tr.params.alpha
    # BFS: root(4), level one (3, 1), leaves (2, 1, 0, 1), each plus alpha
    assert tr.counts == [4 + a, 3 + a, 1 + a, 2 + a, 1 + a, a, 1 + a]
    assert sanitizer_query(tr, 1, 2) == (1 + a) + a
    assert sanitizer_query(tr, 0, 3) == 4 + a  # root alone covers everything
    assert sanitizer_query(tr, 2, 2) == a


def test_tree_noise_independent_per_node():
    r = random.Random(4)
    tr = build_range_sanitizer([0] * 50, 16, 4, 1.0, 0.01, r)
    # root and the leaf-0 chain all contain the same true count but
    # independent noise; they almost surely differ
    assert len({tr.counts[0], tr.counts[1], tr.counts[5]}) > 1


def test_overcount_never_negative():
    r = random.Random(8)
    for _ in range(50):
        tr = build_range_sanitizer([r.randrange(16) for _ in range(30)],
                                   16, 4, LN2, 0.01, r)
        assert all(c >= 0 for c in tr.counts)


def test_clamp_counter():
    # at beta > 0.5 with one bin the bias collapses to zero, so an empty
    # bin clamps whenever its noise draw lands below -1/2
    r = random.Random(2)
    clamped = 0
    for _ in range(200):
        ph = build_point_sanitizer([], 1, LN2, 0.6, r)
        assert ph.params.alpha == 0
        assert all(b >= 0 for b in ph.bins)
        clamped += ph.clamped
    assert 0 < clamped < 200  # some draws clamp, not all


# -- canonical cover ----------------------------------------------------------

def test_cover_worked_example():
    assert canonical_cover(1, 8, 2, 4) == [(2, 1), (2, 2), (2, 3), (1, 1), (2, 8)]


def test_cover_full_domain_is_root():
    assert canonical_cover(0, 15, 2, 4) == [(0, 0)]


def test_cover_single_leaf():
    assert canonical_cover(7, 7, 3, 2) == [(3, 7)]


def _expand(cover, h, k):
    leaves = []
    for lv, i in cover:
        span = k ** (h - lv)
        leaves.extend(range(i * span, (i + 1) * span))
    return leaves


def _is_aligned(lv, i, h, k):
    return True  # any (level, index) node is aligned by construction


def test_cover_exact_and_minimal_exhaustive():
    """Against brute force: the greedy cover tiles the range exactly and
    no aligned cover uses fewer nodes."""
    for k, h in [(2, 3), (4, 2), (3, 2)]:
        N = k ** h
        # all nodes as (level, index) -> leaf interval
        nodes = [(lv, i) for lv in range(h + 1) for i in range(k ** lv)]
        for a in range(N):
            for b in range(a, N):
                cover = canonical_cover(a, b, h, k)
                got = _expand(cover, h, k)
                assert got == list(range(a, b + 1)), (a, b, cover)
                # minimality: brute force the smallest disjoint exact tiling
                best = _min_tiling(a, b, h, k)
                assert len(cover) == best, (a, b, cover, best)


def _min_tiling(a, b, h, k, memo=None):
    if memo is None:
        memo = {}
    if a > b:
        return 0
    if (a, b) in memo:
        return memo[(a, b)]
    best = None
    # choose the node that covers leaf a and starts at a
    for lv in range(h + 1):
        span = k ** (h - lv)
        if a % span == 0 and a + span - 1 <= b:
            rest = _min_tiling(a + span, b, h, k, memo)
            cand = 1 + rest
            if best is None or cand < best:
                best = cand
    memo[(a, b)] = best
    return best


def test_cover_validation():
    with pytest.raises(ParameterError):
        canonical_cover(3, 2, 2, 4)
    with pytest.raises(ParameterError):
        canonical_cover(0, 16, 2, 4)


# -- queries -------------------------------------------------------------------

def test_point_histogram_rejects_ranges():
    ph = build_point_sanitizer([1], 4, LN2, 0.5, MedianRng())
    assert sanitizer_query(ph, 1, 1) == 1 + ph.params.alpha
    with pytest.raises(QueryError):
        sanitizer_query(ph, 0, 1)
    with pytest.raises(QueryError):
        sanitizer_query(ph, 4, 4)


def test_tree_rejects_out_of_domain():
    tr = build_range_sanitizer([], 16, 4, LN2, 0.5, MedianRng())
    with pytest.raises(QueryError):
        sanitizer_query(tr, 0, 16)
    with pytest.raises(QueryError):
        sanitizer_query(tr, -1, 3)


@settings(max_examples=60)
@given(st.integers(0, 63), st.integers(0, 63), st.integers(0, 2**31))
def test_tree_query_equals_cover_sum(a, b, seed):
    a, b = min(a, b), max(a, b)
    r = random.Random(seed)
    keys = [r.randrange(64) for _ in range(r.randrange(50))]
    tr = build_range_sanitizer(keys, 64, 4, 1.0, 0.1, r)
    cover = canonical_cover(a, b, tr.height, 4)
    want = sum(tr.counts[tr.node_index(lv, i)] for lv, i in cover)
    assert sanitizer_query(tr, a, b) == want


def test_median_stub_overcount_exact():
    """With noise pinned at the mean, every answer overcounts by exactly
    alpha per cover node."""
    keys = [3, 5, 5, 9, 14]
    tr = build_range_sanitizer(keys, 16, 4, LN2, 0.5, MedianRng())
    a = tr.params.alpha
    for lo, hi in [(0, 15), (3, 5), (5, 9), (14, 14), (0, 7)]:
        true = sum(1 for v in keys if lo <= v <= hi)
        cover = canonical_cover(lo, hi, tr.height, 4)
        assert sanitizer_query(tr, lo, hi) == true + a * len(cover)


# -- composition ---------------------------------------------------------------

def test_compose_sum_and_max():
    assert compose([LN2 / 2, LN2 / 2], disjoint=False) == LN2
    assert compose([0.3, 0.7, 0.5], disjoint=True) == 0.7
    assert compose([0.9], disjoint=True) == 0.9


def test_compose_validation():
    with pytest.raises(ParameterError):
        compose([], disjoint=False)
    with pytest.raises(ParameterError):
        compose([0.5, -0.1], disjoint=True)


# -- serialization ---------------------------------------------------------------

def test_serialize_roundtrip_tree():
    r = random.Random(17)
    tr = build_range_sanitizer([r.randrange(256) for _ in range(100)],
                               256, 16, LN2, 0.01, r)
    blob = serialize(tr)
    tr2 = deserialize(blob, beta=0.01)
    assert isinstance(tr2, AggregateTree)
    assert tr2.counts == tr.counts
    assert (tr2.params.N, tr2.params.k, tr2.params.alpha) == \
        (tr.params.N, tr.params.k, tr.params.alpha)
    assert tr2.params.epsilon == tr.params.epsilon
    for lo, hi in [(0, 255), (17, 93), (200, 200)]:
        assert sanitizer_query(tr2, lo, hi) == sanitizer_query(tr, lo, hi)


def test_serialize_roundtrip_point():
    ph = build_point_sanitizer([1, 2, 2], 8, LN2, 0.5, MedianRng())
    ph2 = deserialize(serialize(ph))
    assert isinstance(ph2, PointHistogram)
    assert ph2.bins == ph.bins


def test_serialized_counts_are_u64_le_bfs():
    tr = build_range_sanitizer([0, 0, 1, 3], 4, 2, LN2, 0.5, MedianRng())
    blob = serialize(tr)
    body = blob[-8 * len(tr.counts):]
    got = [int.from_bytes(body[i * 8:(i + 1) * 8], "little")
           for i in range(len(tr.counts))]
    assert got == tr.counts


def test_deserialize_rejects_garbage():
    with pytest.raises(DataError):
        deserialize(b"not a sanitizer blob")
    tr = build_range_sanitizer([], 4, 2, LN2, 0.5, MedianRng())
    blob = serialize(tr)
    with pytest.raises(DataError):
        deserialize(blob[:-3])
