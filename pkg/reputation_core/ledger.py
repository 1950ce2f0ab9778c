"""
Score ledgers and the global reputation formula.

A ledger accumulates, for one server, the transaction count T and the
weighted sums POS and NEG of the local scores it received. The global
reputation is

    GR = T * POS / (NEG + 1)

Every function here is pure: ledgers are frozen values and each update
returns a new ledger.

Usage:
  from reputation_core import new_ledger, apply_feedback, global_reputation

  ledger = new_ledger("S1")
  ledger = apply_feedback(ledger, +1, scorer_reputation=5, mode=WeightMode.REPUTATION_WEIGHTED)
  gr = global_reputation(ledger)   # Fraction(5, 1)
"""

from dataclasses import dataclass, replace
from enum import Enum, IntEnum
from fractions import Fraction
from typing import Union

GlobalReputation = Fraction
Number = Union[int, Fraction]


class LocalScore(IntEnum):
    """The +1 / -1 judgment one transaction party gives the other."""

    POSITIVE = 1
    NEGATIVE = -1

    @classmethod
    def coerce(cls, value: int) -> "LocalScore":
        try:
            return cls(int(value))
        except (TypeError, ValueError):
            raise ValueError(f"Local score must be +1 or -1, got {value!r}") from None


class WeightMode(str, Enum):
    """How much a scorer's local score counts.

    UNIT gives every scorer weight 1 (the unweighted counting used by the
    fairness analysis); REPUTATION_WEIGHTED weighs a score by the scorer's
    global reputation at feedback time.
    """

    UNIT = "UNIT"
    REPUTATION_WEIGHTED = "REPUTATION_WEIGHTED"


def as_reputation(value: Union[Number, str, float]) -> GlobalReputation:
    """Convert a number or a "p/q" string to an exact reputation value."""
    rep = Fraction(value) if not isinstance(value, Fraction) else value
    if rep < 0:
        raise ValueError(f"Reputation cannot be negative: {value}")
    return rep


@dataclass(frozen=True)
class ScoreLedger:
    """Per-server accumulator. A fresh ledger is (0, 0, 0)."""

    owner: str
    transactions: int = 0
    pos_accum: Fraction = Fraction(0)
    neg_accum: Fraction = Fraction(0)

    def __post_init__(self):
        if self.transactions < 0:
            raise ValueError(f"Ledger {self.owner}: negative transaction count {self.transactions}")
        if self.pos_accum < 0 or self.neg_accum < 0:
            raise ValueError(f"Ledger {self.owner}: accumulators must be non-negative")
        # Accept plain ints at construction, store exact fractions.
        object.__setattr__(self, "pos_accum", Fraction(self.pos_accum))
        object.__setattr__(self, "neg_accum", Fraction(self.neg_accum))

    @property
    def reputation(self) -> GlobalReputation:
        return global_reputation(self)


def new_ledger(owner: str) -> ScoreLedger:
    return ScoreLedger(owner=owner)


def scorer_weight(rep: Number, mode: WeightMode) -> Fraction:
    """Weight of one scorer's local score: 1 under UNIT, its GR otherwise."""
    rep = as_reputation(rep)
    if WeightMode(mode) is WeightMode.UNIT:
        return Fraction(1)
    return rep


def apply_feedback(
    ledger: ScoreLedger,
    score: int,
    scorer_reputation: Number,
    mode: WeightMode = WeightMode.REPUTATION_WEIGHTED,
) -> ScoreLedger:
    """Apply one local score to a ledger.

    T always increments by one. The weighted score lands in POS or NEG;
    the other accumulator is unchanged. A zero-weight scorer therefore
    changes only T.

    Raises:
        ValueError: score outside {+1, -1} or a negative scorer reputation
    """
    local = LocalScore.coerce(score)
    weight = scorer_weight(scorer_reputation, mode)
    if local is LocalScore.POSITIVE:
        return replace(ledger, transactions=ledger.transactions + 1, pos_accum=ledger.pos_accum + weight)
    return replace(ledger, transactions=ledger.transactions + 1, neg_accum=ledger.neg_accum + weight)


def record_transaction(ledger: ScoreLedger) -> ScoreLedger:
    """Count a completed transaction whose score was discarded."""
    return replace(ledger, transactions=ledger.transactions + 1)


def reset_ledger(ledger: ScoreLedger) -> ScoreLedger:
    """Set a server's reputation back to 0 (revocation)."""
    return new_ledger(ledger.owner)


def global_reputation(ledger: ScoreLedger) -> GlobalReputation:
    # NEG + 1 >= 1, so this is always finite and non-negative.
    return ledger.transactions * ledger.pos_accum / (ledger.neg_accum + 1)


def format_decimal(value: Fraction, places: int = 6) -> str:
    """Render an exact value with a fixed number of decimals for reports."""
    scale = 10 ** places
    rounded = round(Fraction(value) * scale)
    sign = "-" if rounded < 0 else ""
    whole, frac = divmod(abs(rounded), scale)
    return f"{sign}{whole}.{frac:0{places}d}"
