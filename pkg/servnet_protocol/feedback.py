"""
Feedback protocol

After a bound contract's share expires, the share owner signs one local
score about the holder and sends two copies: one through the holder
(which must forward it to its authority) and one straight to the
holder's authority. The authority compares the copies:

  both arrive, identical        ACCEPTED, ledger updated
  both arrive, different        GIVER_CHEATING_FLAGGED, only T counted
  only the direct copy, timed   RECEIVER_DROPPED_RECOVERED, ledger updated
  only the forwarded copy       ACCEPTED once the wait expires
  anything after a decision     DUPLICATE_IGNORED
"""

import logging
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Container, Dict, List, Optional, Tuple

from message_security import PrivateKeyHandle, PublicKeyId, SecurityBackend, TransactionId
from reputation_core import LocalScore, ScoreLedger, WeightMode, apply_feedback, record_transaction, scorer_weight

from servnet_protocol.contract import Envelope
from servnet_protocol.messages import FeedbackCopy, FeedbackMessage
from servnet_protocol.types import FeedbackError, ServerId

logger = logging.getLogger("servnet.feedback")

DEFAULT_FEEDBACK_TIMEOUT = 10


class FeedbackPath(str, Enum):
    TO_TARGET = "to-target"
    FORWARDED = "forwarded"
    DIRECT = "direct"


class FeedbackStatus(str, Enum):
    ACCEPTED = "ACCEPTED"
    GIVER_CHEATING_FLAGGED = "GIVER_CHEATING_FLAGGED"
    RECEIVER_DROPPED_RECOVERED = "RECEIVER_DROPPED_RECOVERED"
    DUPLICATE_IGNORED = "DUPLICATE_IGNORED"


@dataclass(frozen=True)
class FeedbackOutcome:
    status: FeedbackStatus
    txn_id: TransactionId
    scorer: ServerId
    target: ServerId
    score: Optional[LocalScore] = None
    scorer_reputation: Optional[Fraction] = None
    weight: Optional[Fraction] = None


def sign_feedback(
    scorer: ServerId, txn: TransactionId, score: int, backend: SecurityBackend, key: PrivateKeyHandle
) -> FeedbackMessage:
    local = LocalScore.coerce(score)
    signature = backend.sign(FeedbackMessage.body(txn, local, scorer), key, actor=scorer)
    return FeedbackMessage(sender=scorer, txn_id=txn, score=local, scorer=scorer, signature=signature)


def make_feedback(
    scorer: ServerId,
    txn: TransactionId,
    score: int,
    *,
    target: ServerId,
    target_authority: ServerId,
    backend: SecurityBackend,
    key: PrivateKeyHandle,
    bound: Container[TransactionId],
    already_sent: Container[TransactionId] = (),
    via_target_score: Optional[int] = None,
) -> List[Envelope]:
    """Sign a local score and address its two copies.

    via_target_score lets a dishonest scorer put a different score on the
    copy routed through the target; honest callers leave it None.

    Raises:
        FeedbackError: the transaction is not bound or was already scored
        ValueError: score outside {+1, -1}
    """
    if txn not in bound:
        raise FeedbackError(f"Transaction {txn} is not a bound contract of {scorer}")
    if txn in already_sent:
        raise FeedbackError(f"Feedback for {txn} already sent by {scorer}")
    direct = sign_feedback(scorer, txn, score, backend, key)
    routed = direct
    if via_target_score is not None and LocalScore.coerce(via_target_score) != direct.score:
        routed = sign_feedback(scorer, txn, via_target_score, backend, key)
    return [
        Envelope(target, FeedbackCopy(FeedbackPath.TO_TARGET.value, target, routed)),
        Envelope(target_authority, FeedbackCopy(FeedbackPath.DIRECT.value, target, direct)),
    ]


def forward_feedback(copy: FeedbackCopy, authority: ServerId) -> Envelope:
    """The target's duty: pass the copy it received on to its authority, unchanged."""
    return Envelope(authority, FeedbackCopy(FeedbackPath.FORWARDED.value, copy.target, copy.feedback))


def validate_feedback(
    copy: FeedbackCopy, backend: SecurityBackend, scorer_key: Optional[PublicKeyId]
) -> Optional[str]:
    """Reason to discard a copy outright, or None if its signature holds."""
    msg = copy.feedback
    if msg.sender != msg.scorer:
        return "sender-mismatch"
    if scorer_key is None:
        return "unknown-scorer"
    if not backend.verify(msg.signed_part(), msg.signature, scorer_key):
        return "bad-signature"
    return None


@dataclass
class FeedbackSlot:
    """The authority's view of one (transaction, scorer) pair."""

    txn_id: TransactionId
    scorer: ServerId
    target: ServerId
    first_arrival: int
    direct: Optional[FeedbackMessage] = None
    forwarded: Optional[FeedbackMessage] = None
    outcome: Optional[FeedbackOutcome] = None

    @property
    def decided(self) -> bool:
        return self.outcome is not None


def process_feedback(
    slot: FeedbackSlot,
    ledger: ScoreLedger,
    scorer_reputation: Fraction,
    mode: WeightMode = WeightMode.REPUTATION_WEIGHTED,
    timed_out: bool = False,
) -> Tuple[Optional[FeedbackOutcome], ScoreLedger]:
    """Decide a slot if its copies (or the timeout) allow it.

    Returns (None, ledger) while the slot must keep waiting. The ledger
    passed in is the target's; scorer_reputation is the scorer's GR at
    the transaction's first bind.
    """
    if slot.decided:
        return (
            FeedbackOutcome(FeedbackStatus.DUPLICATE_IGNORED, slot.txn_id, slot.scorer, slot.target),
            ledger,
        )

    def applied(status: FeedbackStatus, msg: FeedbackMessage) -> Tuple[FeedbackOutcome, ScoreLedger]:
        weight = scorer_weight(scorer_reputation, mode)
        outcome = FeedbackOutcome(status, slot.txn_id, slot.scorer, slot.target, msg.score, scorer_reputation, weight)
        return outcome, apply_feedback(ledger, msg.score, scorer_reputation, mode)

    if slot.direct is not None and slot.forwarded is not None:
        if slot.direct.encode() == slot.forwarded.encode():
            outcome, updated = applied(FeedbackStatus.ACCEPTED, slot.direct)
        else:
            logger.warning(f"{slot.scorer} sent conflicting scores about {slot.target} for {slot.txn_id}")
            outcome = FeedbackOutcome(FeedbackStatus.GIVER_CHEATING_FLAGGED, slot.txn_id, slot.scorer, slot.target)
            updated = record_transaction(ledger)
    elif timed_out and slot.direct is not None:
        logger.warning(f"{slot.target} never forwarded feedback from {slot.scorer}; using the direct copy")
        outcome, updated = applied(FeedbackStatus.RECEIVER_DROPPED_RECOVERED, slot.direct)
    elif timed_out and slot.forwarded is not None:
        outcome, updated = applied(FeedbackStatus.ACCEPTED, slot.forwarded)
    else:
        return None, ledger
    slot.outcome = outcome
    return outcome, updated


class FeedbackInbox:
    """Pending and decided feedback slots held by one authority."""

    def __init__(self, owner: ServerId):
        self.owner = owner
        self._slots: Dict[Tuple[str, ServerId], FeedbackSlot] = {}

    def receive(self, copy: FeedbackCopy, tick: int) -> Tuple[FeedbackSlot, bool]:
        """File a validated copy. Returns (slot, duplicate)."""
        msg = copy.feedback
        key = (str(msg.txn_id), msg.scorer)
        slot = self._slots.get(key)
        if slot is None:
            slot = self._slots[key] = FeedbackSlot(msg.txn_id, msg.scorer, copy.target, first_arrival=tick)
        if slot.decided:
            return slot, True
        if copy.path == FeedbackPath.DIRECT.value:
            if slot.direct is not None:
                return slot, True
            slot.direct = msg
        else:
            if slot.forwarded is not None:
                return slot, True
            slot.forwarded = msg
        return slot, False

    def get(self, txn: TransactionId, scorer: ServerId) -> Optional[FeedbackSlot]:
        return self._slots.get((str(txn), scorer))

    def pending(self) -> List[FeedbackSlot]:
        return [s for _, s in sorted(self._slots.items()) if not s.decided]

    def hand_over(self) -> Tuple[List[FeedbackSlot], List[FeedbackCopy]]:
        """Give up every undecided slot, with the copies it holds re-wrapped for the successor."""
        pending = self.pending()
        copies = []
        for slot in pending:
            del self._slots[(str(slot.txn_id), slot.scorer)]
            if slot.direct is not None:
                copies.append(FeedbackCopy(FeedbackPath.DIRECT.value, slot.target, slot.direct))
            if slot.forwarded is not None:
                copies.append(FeedbackCopy(FeedbackPath.FORWARDED.value, slot.target, slot.forwarded))
        return pending, copies
