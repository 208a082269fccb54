"""Statistical audits for the privacy-bearing components.

These are empirical checks, not proofs: access-pattern traces are
compared with a chi-square test, the noise mechanism's likelihood
ratios are bounded on neighboring inputs, and the bias parameters are
re-derived in high-precision arithmetic to confirm minimality. Each
audit returns a small report with the statistic, the threshold it was
held to, and the verdict.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from decimal import Decimal, getcontext
from pathlib import Path

import numpy as np
from scipy.stats import chi2_contingency

from shrouddb.errors import ParameterError
from shrouddb.rng import derive_stream
from shrouddb.sanitizer import alpha_point, alpha_range, tree_nodes_count

__all__ = [
    "AuditReport",
    "audit_obliviousness",
    "audit_dp_ratio",
    "audit_alpha_point_minimality",
    "audit_alpha_range_minimality",
    "save_trace",
    "load_trace",
]


@dataclass(frozen=True)
class AuditReport:
    name: str
    statistic: float
    threshold: float
    passed: bool
    sample_size: int
    detail: str = ""

    def __str__(self) -> str:
        verdict = "pass" if self.passed else "FAIL"
        return (f"[{verdict}] {self.name}: statistic {self.statistic:.6g} "
                f"vs threshold {self.threshold:.6g} (n={self.sample_size})"
                + (f" {self.detail}" if self.detail else ""))


def audit_obliviousness(trace_a: list[int], trace_b: list[int],
                        p_threshold: float = 0.001) -> AuditReport:
    """Chi-square homogeneity of two leaf-access traces.

    Passes when the traces are statistically indistinguishable, i.e.
    the p-value stays above the threshold. Traces must be equally long
    so the test compares distributions, not volumes.
    """
    if len(trace_a) != len(trace_b):
        raise ParameterError("traces must have equal length")
    if not trace_a:
        raise ParameterError("traces must be nonempty")
    width = max(max(trace_a), max(trace_b)) + 1
    table = np.zeros((2, width), dtype=np.int64)
    table[0] = np.bincount(trace_a, minlength=width)
    table[1] = np.bincount(trace_b, minlength=width)
    table = table[:, table.sum(axis=0) > 0]
    _, p, dof, _ = chi2_contingency(table)
    return AuditReport(
        name="oblivious-access", statistic=float(p), threshold=p_threshold,
        passed=bool(p > p_threshold), sample_size=len(trace_a),
        detail=f"dof={dof}")


def audit_dp_ratio(mechanism, keys_a: list[int], keys_b: list[int], N: int,
                   epsilon: float, reps: int = 10_000, seed: int = 0,
                   slack: float = 0.20, min_count: int = 200) -> AuditReport:
    """Empirical likelihood-ratio bound on neighboring inputs.

    ``mechanism(keys, rng) -> int`` is run ``reps`` times per input
    with fresh derived rngs. An epsilon-DP mechanism bounds the
    probability ratio of every event, in particular every one-sided
    tail {output >= t} and {output <= t}; tails aggregate enough mass
    to estimate tightly, so the worst tail ratio must stay within
    ``e^epsilon * (1 + slack)``. Tails with fewer than ``min_count``
    samples on both sides are skipped; a tail that only one input can
    reach is an immediate failure.
    """
    ha = [0] * N
    for v in keys_a:
        ha[v] += 1
    hb = [0] * N
    for v in keys_b:
        hb[v] += 1
    if sum(abs(x - y) for x, y in zip(ha, hb)) != 1:
        raise ParameterError("inputs must be neighbors: histograms differing by one")
    out_a = np.array([mechanism(keys_a, derive_stream(seed, f"dp:a:{i}"))
                      for i in range(reps)])
    out_b = np.array([mechanism(keys_b, derive_stream(seed, f"dp:b:{i}"))
                      for i in range(reps)])

    bound = float(np.exp(epsilon)) * (1.0 + slack)
    worst = 0.0
    for t in np.union1d(out_a, out_b):
        for ca, cb in (
            (int((out_a >= t).sum()), int((out_b >= t).sum())),
            (int((out_a <= t).sum()), int((out_b <= t).sum())),
        ):
            if max(ca, cb) < min_count:
                continue
            if min(ca, cb) == 0:
                worst = float("inf")
                continue
            worst = max(worst, ca / cb, cb / ca)
    return AuditReport(
        name="dp-likelihood-ratio", statistic=worst, threshold=bound,
        passed=worst <= bound, sample_size=reps)


def _laplace_keep_probability(alpha: int, rate: Decimal) -> Decimal:
    """Pr[Lap(1/rate) > -alpha] = 1 - exp(-alpha * rate) / 2 for alpha >= 0."""
    return 1 - (-alpha * rate).exp() / 2


def _guarantee_holds(alpha: int, rate: Decimal, draws: int, beta: Decimal) -> bool:
    return _laplace_keep_probability(alpha, rate) ** draws >= 1 - beta


def audit_alpha_point_minimality(epsilon: float, beta: float, N: int) -> AuditReport:
    """Confirms in 60-digit arithmetic that the point bias satisfies the
    all-bins guarantee and that one less would not."""
    getcontext().prec = 60
    alpha = alpha_point(epsilon, beta, N)
    rate = Decimal(repr(epsilon))
    b = Decimal(repr(beta))
    ok = _guarantee_holds(alpha, rate, N, b)
    minimal = alpha == 0 or not _guarantee_holds(alpha - 1, rate, N, b)
    return AuditReport(
        name="alpha-point-minimality", statistic=float(alpha),
        threshold=float(alpha), passed=ok and minimal, sample_size=N,
        detail="holds" + ("+minimal" if minimal else "+NOT-minimal"))


def audit_alpha_range_minimality(epsilon: float, beta: float, N: int,
                                 k: int) -> AuditReport:
    """Same check for the aggregate tree, where noise scales with height."""
    getcontext().prec = 60
    alpha = alpha_range(epsilon, beta, N, k)
    nodes = tree_nodes_count(N, k)
    h = 0
    v = 1
    while v < N:
        v *= k
        h += 1
    rate = Decimal(repr(epsilon)) / h
    b = Decimal(repr(beta))
    ok = _guarantee_holds(alpha, rate, nodes, b)
    minimal = alpha == 0 or not _guarantee_holds(alpha - 1, rate, nodes, b)
    return AuditReport(
        name="alpha-range-minimality", statistic=float(alpha),
        threshold=float(alpha), passed=ok and minimal, sample_size=nodes,
        detail="holds" + ("+minimal" if minimal else "+NOT-minimal"))


def save_trace(trace: list[int], path: str | Path) -> None:
    """Leaf trace as little-endian u32s, count first."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(trace)))
        fh.write(struct.pack(f"<{len(trace)}I", *trace))


def load_trace(path: str | Path) -> list[int]:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise ParameterError(f"no trace header in {path}")
    (count,) = struct.unpack_from("<I", raw, 0)
    if len(raw) != 4 + 4 * count:
        raise ParameterError(f"trace length mismatch in {path}")
    return list(struct.unpack_from(f"<{count}I", raw, 4))
