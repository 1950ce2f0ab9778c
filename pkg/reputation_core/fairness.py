"""
Fairness analysis for two peers with periodic negative scores.

A peer that completes t transactions and receives a negative score after
every m transactions has, counting scores unweighted,

    NEG = t/m,  POS = t(m-1)/m,  GR = t^2 (m-1) / (t + m)

Peer 1 overtakes peer 2 once GR_1 > GR_2. With k = GR_2 that is the
quadratic (m1-1) T1^2 - k T1 - m1 k > 0, solved here for the smallest
integer T1.
"""

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional

import numpy as np

from reputation_core.ledger import (
    GlobalReputation,
    LocalScore,
    WeightMode,
    apply_feedback,
    global_reputation,
    new_ledger,
)


@dataclass(frozen=True)
class FairnessParams:
    """t transactions, a negative score every m-th one."""

    t: int
    m: int

    def __post_init__(self):
        if self.t < 0:
            raise ValueError(f"Transaction count must be >= 0, got {self.t}")
        if self.m < 2:
            raise ValueError(f"Negative-score period must be >= 2, got {self.m}")


def closed_form_gr(p: FairnessParams) -> GlobalReputation:
    return Fraction(p.t * p.t * (p.m - 1), p.t + p.m)


def discrete_gr(p: FairnessParams) -> GlobalReputation:
    """GR of the actual integer score sequence: floor(t/m) negatives.

    Equal to closed_form_gr when m divides t.
    """
    neg = p.t // p.m
    return Fraction(p.t * (p.t - neg), neg + 1)


def simulate_unit_gr(p: FairnessParams, owner: str = "peer") -> GlobalReputation:
    """Drive apply_feedback through t UNIT feedbacks, -1 at every m-th."""
    ledger = new_ledger(owner)
    for i in range(1, p.t + 1):
        score = LocalScore.NEGATIVE if i % p.m == 0 else LocalScore.POSITIVE
        ledger = apply_feedback(ledger, score, 1, WeightMode.UNIT)
    return global_reputation(ledger)


def analytic_threshold_root(m1: int, k: Fraction) -> float:
    """Positive root of (m1-1) T^2 - k T - m1 k = 0."""
    if m1 < 2:
        raise ValueError(f"m1 must be >= 2, got {m1}")
    a = m1 - 1
    kf = float(k)
    return (kf + math.sqrt(kf * kf + 4 * a * m1 * kf)) / (2 * a)


def fairness_threshold(m1: int, q: FairnessParams) -> int:
    """Smallest integer T1 with closed_form_gr(T1, m1) > closed_form_gr(q).

    Starts from the ceiling of the positive root and corrects by +/-1
    against the exact closed form, since the float root can sit a hair on
    either side of an integer.
    """
    k = closed_form_gr(q)
    root = analytic_threshold_root(m1, k)
    t1 = max(0, math.floor(root) + 1)

    def beats(t: int) -> bool:
        return closed_form_gr(FairnessParams(t, m1)) > k

    while t1 > 0 and beats(t1 - 1):
        t1 -= 1
    while not beats(t1):
        t1 += 1
    return t1


def scan_threshold(m1: int, q: FairnessParams, limit: Optional[int] = None) -> int:
    """Linear-scan oracle for fairness_threshold.

    Compares t^2 (m1-1) / (t + m1) with k by cross-multiplying integers.
    """
    if m1 < 2:
        raise ValueError(f"m1 must be >= 2, got {m1}")
    k = closed_form_gr(q)
    num, den = k.numerator, k.denominator
    t = 0
    while t * t * (m1 - 1) * den <= num * (t + m1):
        t += 1
        if limit is not None and t > limit:
            raise ValueError(f"No threshold below {limit} for m1={m1}, peer 2 {q}")
    return t


def fairness_table(m1: int, q: FairnessParams, t_max: int) -> Dict[str, List[float]]:
    """Closed-form GR of both peers over T = 0..t_max (peer 2 fixed at q).

    Returns float columns for display; the exact comparisons live in
    fairness_threshold.
    """
    if t_max < 0:
        raise ValueError(f"t_max must be >= 0, got {t_max}")
    t = np.arange(t_max + 1, dtype=float)
    gr1 = t * t * (m1 - 1) / (t + m1)
    gr2 = np.full_like(t, float(closed_form_gr(q)))
    return {
        "t": t.astype(int).tolist(),
        "gr_peer1": gr1.tolist(),
        "gr_peer2": gr2.tolist(),
        "peer1_ahead": (gr1 > gr2).tolist(),
    }
