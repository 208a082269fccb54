"""Differentially private count sanitizers.

Two structures, both Laplace-perturbed histograms with a positive bias
so that noisy counts almost never undershoot the truth:

* a flat histogram for point queries, one bin per domain value, and
* a k-ary aggregate tree for range queries, one counter per node, a
  range answered by summing the canonical aligned cover of the range.

The bias ``alpha`` is chosen so that with probability at least
``1 - beta`` every counter's noise exceeds ``-alpha``, making every
answer an overcount; overcounts cost extra fetches but never hide
records. Counters are rounded half away from zero and clamped at zero;
clamps are counted because each one marks a (rare) undershoot.
"""

from __future__ import annotations

import math
import random
import struct
from dataclasses import dataclass

import numpy as np

from shrouddb.errors import DataError, ParameterError, QueryError

__all__ = [
    "laplace_sample",
    "alpha_point",
    "alpha_range",
    "tree_nodes_count",
    "SanitizerParams",
    "PointHistogram",
    "AggregateTree",
    "build_point_sanitizer",
    "build_range_sanitizer",
    "canonical_cover",
    "sanitizer_query",
    "compose",
    "serialize",
    "deserialize",
]

MAGIC = b"SDS1"
KIND_POINT = 1
KIND_TREE = 2


def laplace_sample(mean: float, scale: float, rng: random.Random) -> float:
    """Inverse-CDF Laplace draw; a uniform of exactly 0.5 maps to ``mean``."""
    if scale <= 0.0:
        raise ParameterError("laplace scale must be positive")
    u = rng.random()
    while u == 0.0:  # avoid the infinite left tail
        u = rng.random()
    d = u - 0.5
    return mean - scale * math.copysign(1.0, d) * math.log(1.0 - 2.0 * abs(d))


def _check_eps_beta(epsilon: float, beta: float) -> None:
    if epsilon <= 0.0:
        raise ParameterError("epsilon must be positive")
    if not 0.0 < beta < 1.0:
        raise ParameterError("beta must be in (0, 1)")


def alpha_point(epsilon: float, beta: float, N: int) -> int:
    """Smallest bias keeping all ``N`` bins non-negative w.p. ``1 - beta``."""
    _check_eps_beta(epsilon, beta)
    if N < 1:
        raise ParameterError("domain size must be >= 1")
    arg = 2.0 - 2.0 * (1.0 - beta) ** (1.0 / N)
    return max(0, math.ceil(-math.log(arg) / epsilon))


def _tree_height(N: int, k: int) -> int:
    if k < 2:
        raise ParameterError("fanout k must be >= 2")
    if N < 1:
        raise ParameterError("domain size must be >= 1")
    h, v = 0, 1
    while v < N:
        v *= k
        h += 1
    if v != N:
        raise ParameterError(f"domain size {N} is not a power of fanout {k}")
    return h


def tree_nodes_count(N: int, k: int) -> int:
    """Total counters in a k-ary aggregate tree over domain ``[0, N)``."""
    h = _tree_height(N, k)
    return (k ** h - 1) // (k - 1) + N


def alpha_range(epsilon: float, beta: float, N: int, k: int) -> int:
    """Per-node bias for the aggregate tree; noise scale grows with height."""
    _check_eps_beta(epsilon, beta)
    h = _tree_height(N, k)
    if h < 1:
        raise ParameterError("tree needs at least one level: require N >= k")
    nodes = (k ** h - 1) // (k - 1) + N
    arg = 2.0 - 2.0 * (1.0 - beta) ** (1.0 / nodes)
    return max(0, math.ceil(-math.log(arg) * h / epsilon))


@dataclass(frozen=True)
class SanitizerParams:
    """Immutable description of one sanitizer: domain, fanout, bias, budget."""

    N: int
    k: int
    alpha: int
    epsilon: float
    beta: float


def _round_clamp(x: float) -> tuple[int, bool]:
    """Round half away from zero, clamp at zero; flags a clamp."""
    r = math.floor(x + 0.5) if x >= 0.0 else math.ceil(x - 0.5)
    return (0, True) if r < 0 else (r, False)


class PointHistogram:
    """Noisy per-value counts; answers point lookups only."""

    kind = KIND_POINT

    def __init__(self, params: SanitizerParams, bins: list[int], clamped: int = 0):
        self.params = params
        self.bins = bins
        self.clamped = clamped

    def query(self, a: int, b: int) -> int:
        if a != b:
            raise QueryError("point histogram cannot answer range queries")
        if not 0 <= a < self.params.N:
            raise QueryError(f"value {a} outside domain [0, {self.params.N})")
        return self.bins[a]


class AggregateTree:
    """Noisy k-ary interval tree; ``counts`` is the breadth-first layout,
    root first, then each level left to right, leaves last."""

    kind = KIND_TREE

    def __init__(self, params: SanitizerParams, counts: list[int], clamped: int = 0):
        self.params = params
        self.counts = counts
        self.clamped = clamped
        self.height = _tree_height(params.N, params.k)

    def node_index(self, level: int, i: int) -> int:
        k = self.params.k
        return (k ** level - 1) // (k - 1) + i

    def query(self, a: int, b: int) -> int:
        if not 0 <= a <= b < self.params.N:
            raise QueryError(f"range [{a}, {b}] outside domain [0, {self.params.N})")
        cover = canonical_cover(a, b, self.height, self.params.k)
        return sum(self.counts[self.node_index(lv, i)] for lv, i in cover)


def build_point_sanitizer(keys: list[int], N: int, epsilon: float, beta: float,
                          rng: random.Random) -> PointHistogram:
    """Histogram of ``keys`` over ``[0, N)`` with biased Laplace noise per bin."""
    alpha = alpha_point(epsilon, beta, N)
    for v in keys:
        if not 0 <= v < N:
            raise DataError(f"key {v} outside domain [0, {N})")
    true = np.bincount(keys, minlength=N) if keys else np.zeros(N, dtype=np.int64)
    scale = 1.0 / epsilon
    bins: list[int] = []
    clamped = 0
    for c in true.tolist():
        v, hit = _round_clamp(laplace_sample(c + alpha, scale, rng))
        bins.append(v)
        clamped += hit
    return PointHistogram(SanitizerParams(N, 0, alpha, epsilon, beta), bins, clamped)


def build_range_sanitizer(keys: list[int], N: int, k: int, epsilon: float,
                          beta: float, rng: random.Random) -> AggregateTree:
    """Aggregate tree over ``[0, N)``: every node holds the true count of
    its leaf interval plus its own independent biased noise, drawn in
    breadth-first order."""
    alpha = alpha_range(epsilon, beta, N, k)
    h = _tree_height(N, k)
    for v in keys:
        if not 0 <= v < N:
            raise DataError(f"key {v} outside domain [0, {N})")
    leaf = np.bincount(keys, minlength=N).astype(np.int64) if keys \
        else np.zeros(N, dtype=np.int64)
    levels = [leaf]
    for _ in range(h):
        levels.append(levels[-1].reshape(-1, k).sum(axis=1))
    levels.reverse()  # root level first
    scale = h / epsilon
    counts: list[int] = []
    clamped = 0
    for level in levels:
        for c in level.tolist():
            v, hit = _round_clamp(laplace_sample(c + alpha, scale, rng))
            counts.append(v)
            clamped += hit
    return AggregateTree(SanitizerParams(N, k, alpha, epsilon, beta), counts, clamped)


def canonical_cover(a: int, b: int, height: int, k: int) -> list[tuple[int, int]]:
    """Unique minimal set of aligned tree nodes covering leaves ``[a, b]``.

    Returned as (level, index) pairs ordered left to right by the leaf
    interval they cover; level 0 is the root, ``height`` the leaves.
    Greedy: trim unaligned edges at the current level, then ascend.
    """
    if not 0 <= a <= b < k ** height:
        raise ParameterError(f"leaf range [{a}, {b}] invalid for height {height}")
    left: list[tuple[int, int]] = []
    right_batches: list[list[tuple[int, int]]] = []
    lo, hi, level = a, b, height
    while level > 0:
        if lo % k != 0:
            upto = min(hi, lo - lo % k + k - 1)
            left.extend((level, i) for i in range(lo, upto + 1))
            lo = upto + 1
            if lo > hi:
                break
        if (hi + 1) % k != 0:
            downto = max(lo, hi - hi % k)
            right_batches.append([(level, i) for i in range(downto, hi + 1)])
            hi = downto - 1
            if lo > hi:
                break
        lo //= k
        hi //= k
        level -= 1
    mid = [(level, i) for i in range(lo, hi + 1)] if lo <= hi else []
    right: list[tuple[int, int]] = []
    for batch in reversed(right_batches):
        right.extend(batch)
    return left + mid + right


def sanitizer_query(ds: PointHistogram | AggregateTree, a: int, b: int) -> int:
    """Noisy count for the inclusive range ``[a, b]`` (point when a == b)."""
    return ds.query(a, b)


def compose(budgets: list[float], disjoint: bool) -> float:
    """Total privacy budget: max over disjoint structures, sum otherwise."""
    if not budgets:
        raise ParameterError("no budgets to compose")
    for e in budgets:
        if e <= 0.0:
            raise ParameterError("epsilon must be positive")
    return max(budgets) if disjoint else math.fsum(budgets)


def serialize(ds: PointHistogram | AggregateTree) -> bytes:
    """Header (kind, k, N, alpha, epsilon, count) then flat u64-LE counts
    in breadth-first order (bin order for the point histogram)."""
    counts = ds.bins if ds.kind == KIND_POINT else ds.counts
    p = ds.params
    head = MAGIC + struct.pack("<BIQId Q", ds.kind, p.k, p.N, p.alpha, p.epsilon,
                               len(counts))
    return head + struct.pack(f"<{len(counts)}Q", *counts)


def deserialize(data: bytes, beta: float = 0.0) -> PointHistogram | AggregateTree:
    head = struct.calcsize("<BIQId Q")
    if len(data) < 4 + head or data[:4] != MAGIC:
        raise DataError("not a serialized sanitizer")
    kind, k, N, alpha, epsilon, count = struct.unpack_from("<BIQId Q", data, 4)
    body = data[4 + head:]
    if len(body) != 8 * count:
        raise DataError(f"expected {8 * count} count bytes, found {len(body)}")
    counts = list(struct.unpack(f"<{count}Q", body))
    params = SanitizerParams(N, k, alpha, epsilon, beta)
    if kind == KIND_POINT:
        if count != N:
            raise DataError("bin count does not match domain size")
        return PointHistogram(params, counts)
    if kind == KIND_TREE:
        if count != tree_nodes_count(N, k):
            raise DataError("node count does not match tree shape")
        return AggregateTree(params, counts)
    raise DataError(f"unknown sanitizer kind {kind}")
