"""Notary committee sizing under hypergeometric sampling.

A committee of m members is drawn without replacement from N nodes of which K
are Byzantine.  The committee fails when its Byzantine count X exceeds the
agreement tolerance floor((m - 1) / 3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional

import numpy as np
from scipy.special import gammaln

LN2 = math.log(2.0)


class DomainError(ValueError):
    pass


class Infeasible(ValueError):
    pass


def tolerance(m: int) -> int:
    return (m - 1) // 3


def _check(N: int, K: int, m: int) -> None:
    if not (0 <= K <= N and 1 <= m <= N):
        raise DomainError(f"need 0 <= K <= N and 1 <= m <= N, got N={N} K={K} m={m}")


def fail_prob_exact(N: int, K: int, m: int, threshold: Optional[int] = None) -> Fraction:
    """P[X > threshold] as an exact rational (threshold defaults to the tolerance)."""
    _check(N, K, m)
    t = tolerance(m) if threshold is None else threshold
    lo, hi = max(t + 1, m - (N - K), 0), min(m, K)
    num = sum(math.comb(K, x) * math.comb(N - K, m - x) for x in range(lo, hi + 1))
    return Fraction(num, math.comb(N, m))


def log2_fail_prob(N: int, K: int, m: int, threshold: Optional[int] = None) -> float:
    """log2 P[X > threshold] via log-gamma terms and a compensated sum."""
    _check(N, K, m)
    t = tolerance(m) if threshold is None else threshold
    lo, hi = max(t + 1, m - (N - K), 0), min(m, K)
    if lo > hi:
        return -math.inf
    x = np.arange(lo, hi + 1, dtype=np.float64)
    logs = (
        gammaln(K + 1) - gammaln(x + 1) - gammaln(K - x + 1)
        + gammaln(N - K + 1) - gammaln(m - x + 1) - gammaln(N - K - m + x + 1)
        - (gammaln(N + 1) - gammaln(m + 1) - gammaln(N - m + 1))
    )
    top = float(logs.max())
    tail = math.fsum(np.exp(logs - top).tolist())
    return (top + math.log(tail)) / LN2


def fail_prob(N: int, K: int, m: int) -> float:
    return 2.0 ** log2_fail_prob(N, K, m)


def exact_meets(N: int, K: int, m: int, target_log2: int, threshold: Optional[int] = None) -> bool:
    p = fail_prob_exact(N, K, m, threshold)
    # p <= 2^target  <=>  p * 2^-target <= 1, target is a negative integer
    return p * (Fraction(2) ** (-target_log2)) <= 1


@dataclass(frozen=True)
class SizingQuery:
    population: int
    byzantine: int
    target_log2: int

    def __post_init__(self):
        if not 0 <= self.byzantine <= self.population:
            raise DomainError("byzantine count outside [0, population]")


def min_notary_size(
    q: SizingQuery,
    threshold: Optional[Callable[[int], int]] = None,
    verify: bool = True,
) -> int:
    """First m scanning upward whose failure probability is at most 2^target."""
    N, K, target = q.population, q.byzantine, q.target_log2
    thr = threshold or tolerance
    for m in range(1, N + 1):
        lp = log2_fail_prob(N, K, m, thr(m))
        # decide near-boundary cases exactly; 1e-6 in log2 is far above float error
        if lp <= target - 1e-6 or (abs(lp - target) < 1e-6 and exact_meets(N, K, m, target, thr(m))):
            if verify and not exact_meets(N, K, m, target, thr(m)):
                raise AssertionError(f"log-space and exact paths disagree at m={m}")
            return m
    raise Infeasible(f"no committee size up to {N} reaches 2^{target}")


# -- the published table ------------------------------------------------------

TABLE_POPULATIONS = (10_000, 100_000)
TABLE_RATIOS = ((1, 4), (1, 5))
TABLE_TARGETS = (-40, -60, -80)

# (population, ratio denominator, target) -> published size
PUBLISHED = {
    (10_000, 4, -40): 1237, (10_000, 5, -40): 481,
    (100_000, 4, -40): 1402, (100_000, 5, -40): 489,
    (10_000, 4, -60): 1789, (10_000, 5, -60): 724,
    (100_000, 4, -60): 2165, (100_000, 5, -60): 774,
    (10_000, 4, -80): 2272, (10_000, 5, -80): 952,
    (100_000, 4, -80): 2900, (100_000, 5, -80): 1054,
}


def _alt_thresholds() -> dict[str, Callable[[int], int]]:
    return {
        "X > floor((m-1)/3)": tolerance,
        "X >= m/3": lambda m: -(-m // 3) - 1,
        "X > m/3": lambda m: m // 3,
    }


@dataclass(frozen=True)
class TableCell:
    population: int
    byzantine: int
    target_log2: int
    computed: int
    published: int
    log2_fail_computed: float
    log2_fail_published: float
    diagnosis: str = ""

    @property
    def match(self) -> bool:
        return self.computed == self.published


def diagnose(N: int, K: int, target: int, computed: int, published: int) -> str:
    """Explain a mismatch: which threshold conventions (if any) give the published size."""
    if computed == published:
        return ""
    notes = []
    lp = log2_fail_prob(N, K, published)
    notes.append(f"log2 fail({published})={lp:.3f} vs target {target}")
    hits = [
        name for name, thr in _alt_thresholds().items()
        if min_notary_size(SizingQuery(N, K, target), thr, verify=False) == published
    ]
    notes.append("reproduced by: " + (", ".join(hits) if hits else "no tested convention"))
    if abs(computed - published) > 1:
        notes.append(f"off by {published - computed}, not a +/-1 convention effect")
    return "; ".join(notes)


def table_cell(N: int, ratio_den: int, target: int, with_diagnosis: bool = True) -> TableCell:
    K = N // ratio_den
    m = min_notary_size(SizingQuery(N, K, target))
    pub = PUBLISHED[N, ratio_den, target]
    diag = diagnose(N, K, target, m, pub) if with_diagnosis else ""
    return TableCell(N, K, target, m, pub, log2_fail_prob(N, K, m), log2_fail_prob(N, K, pub), diag)


def reproduce_table(with_diagnosis: bool = True) -> list[TableCell]:
    return [
        table_cell(N, den, target, with_diagnosis)
        for target in TABLE_TARGETS
        for N in TABLE_POPULATIONS
        for _, den in TABLE_RATIOS
    ]
