"""
Contract protocol (messages 1 to 11)

Two servers agree to store each other's shares. Each side runs one
ContractSession; contract_advance() is the pure transition function
taking (session, incoming, context) to (session', outgoing envelopes).

Initiator A:  IDLE -1-> SENT_1 -5b-> AWAIT_REP -8-> SENT_9 -10-> AWAIT_HASH -11-> DONE
                       \\-5a-> REJECTED          \\-9a-> REJECTED
Responder B:  IDLE -1-> AWAIT_REP -4-> SENT_5 -9b-> AWAIT_HASH -10/11-> DONE
                                   \\-5a-> REJECTED  \\-9a-> REJECTED

Any message that is illegal for the current state aborts the session.
Terminal sessions ignore further input. Both parties finish by comparing
signed hashes of their transcripts (messages 1, 5, 9 and 10 as each saw
them): a contract is bound only when both hashes agree.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Callable, Dict, List, Mapping, Optional, Set, Tuple, Union

from message_security import (
    Nonce,
    PrivateKeyHandle,
    PublicKeyId,
    SecurityBackend,
    TransactionId,
    canonical,
    digest,
)
from message_security.encoding import TRANSCRIPT_TAG

from servnet_protocol.messages import (
    ContractAck,
    ContractCounter,
    ContractReject,
    ContractRequest,
    ProtocolMessage,
    ReputationAttestation,
    ReputationQuery,
    TranscriptHash,
)
from servnet_protocol.types import ServerId, TradeParams

logger = logging.getLogger("servnet.contract")

DEFAULT_QUERY_TIMEOUT = 10


class SessionRole(str, Enum):
    INITIATOR = "initiator"
    RESPONDER = "responder"


class SessionState(str, Enum):
    IDLE = "IDLE"
    SENT_1 = "SENT_1"
    AWAIT_REP = "AWAIT_REP"
    SENT_5 = "SENT_5"
    SENT_9 = "SENT_9"
    AWAIT_HASH = "AWAIT_HASH"
    DONE = "DONE"
    REJECTED = "REJECTED"
    ABORTED = "ABORTED"

    @property
    def terminal(self) -> bool:
        return self in (SessionState.DONE, SessionState.REJECTED, SessionState.ABORTED)


class AbortReason(str, Enum):
    PROTOCOL_VIOLATION = "protocol-violation"
    BAD_AUTHORITY_ATTESTATION = "bad-authority-attestation"
    STALE_OR_REPLAY = "stale-or-replay"
    TIMEOUT = "timeout"
    TRANSCRIPT_MISMATCH = "transcript-mismatch"
    FORGED_BINDING = "forged-binding"


class TranscriptVerdict(str, Enum):
    CONTRACT_BOUND = "CONTRACT_BOUND"
    ABORTED = "ABORTED"


@dataclass(frozen=True)
class StartContract:
    params: TradeParams


@dataclass(frozen=True)
class SendHash:
    pass


@dataclass(frozen=True)
class Timeout:
    """Fires for the session step it was armed at; stale timers do nothing."""

    step: int


Command = Union[StartContract, SendHash, Timeout]
Incoming = Union[ProtocolMessage, Command]


@dataclass(frozen=True)
class Envelope:
    dst: ServerId
    message: ProtocolMessage


class NonceCache:
    """Per-peer record of nonces already accepted. Disabled caches accept everything."""

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self._seen: Dict[ServerId, Set[int]] = {}

    def seen(self, peer: ServerId, nonce: Nonce) -> bool:
        return self.enabled and nonce.value in self._seen.get(peer, set())

    def check_and_remember(self, peer: ServerId, nonce: Nonce) -> bool:
        """True if nonce is fresh for peer; remembers it either way."""
        if not self.enabled:
            return True
        bucket = self._seen.setdefault(peer, set())
        if nonce.value in bucket:
            return False
        bucket.add(nonce.value)
        return True


Decision = Callable[[ServerId, Fraction, int, TradeParams], bool]


@dataclass
class ContractContext:
    """Everything a node brings to its contract sessions."""

    node: ServerId
    backend: SecurityBackend
    key: PrivateKeyHandle
    authority: ServerId
    fresh_nonce: Callable[[], Nonce]
    authorities: Mapping[ServerId, PublicKeyId]
    decide: Decision
    counter_params: Callable[[TradeParams], TradeParams] = lambda params: params
    seen: NonceCache = field(default_factory=NonceCache)
    transcript_check: bool = True


@dataclass(frozen=True)
class ContractSession:
    session_id: str
    role: SessionRole
    owner: ServerId
    peer: ServerId
    state: SessionState = SessionState.IDLE
    transcript: Tuple[bytes, ...] = ()
    own_params: Optional[TradeParams] = None
    peer_params: Optional[TradeParams] = None
    own_nonce: Optional[Nonce] = None
    peer_nonce: Optional[Nonce] = None
    query_nonce: Optional[Nonce] = None
    peer_key: Optional[PublicKeyId] = None
    peer_authority: Optional[ServerId] = None
    peer_reputation: Optional[Fraction] = None
    peer_transactions: Optional[int] = None
    abort_reason: Optional[AbortReason] = None
    verdict: Optional[TranscriptVerdict] = None
    steps: int = 0

    @property
    def txn_id(self) -> Optional[TransactionId]:
        if self.own_nonce is None or self.peer_nonce is None:
            return None
        if self.role is SessionRole.INITIATOR:
            return TransactionId(self.own_nonce, self.peer_nonce)
        return TransactionId(self.peer_nonce, self.own_nonce)

    @property
    def bound(self) -> bool:
        return self.verdict is TranscriptVerdict.CONTRACT_BOUND


Step = Tuple[ContractSession, List[Envelope]]


def transcript_digest(transcript: Tuple[bytes, ...]) -> bytes:
    return digest(canonical(TRANSCRIPT_TAG, *transcript))


def new_session(session_id: str, role: SessionRole, owner: ServerId, peer: ServerId) -> ContractSession:
    return ContractSession(session_id=session_id, role=role, owner=owner, peer=peer)


def _move(session: ContractSession, state: SessionState, **changes) -> ContractSession:
    return replace(session, state=state, steps=session.steps + 1, **changes)


def _abort(session: ContractSession, reason: AbortReason) -> Step:
    logger.debug(f"{session.owner}/{session.session_id} aborted in {session.state.value}: {reason.value}")
    return _move(session, SessionState.ABORTED, abort_reason=reason, verdict=TranscriptVerdict.ABORTED), []


def _check_attestation(
    session: ContractSession, msg: ReputationAttestation, ctx: ContractContext
) -> Optional[AbortReason]:
    if session.query_nonce is None or msg.query_nonce != session.query_nonce:
        return AbortReason.STALE_OR_REPLAY
    if not ctx.seen.check_and_remember(msg.authority, msg.query_nonce):
        return AbortReason.STALE_OR_REPLAY
    if msg.subject != session.peer:
        return AbortReason.BAD_AUTHORITY_ATTESTATION
    authority_key = ctx.authorities.get(msg.authority)
    if authority_key is None or not ctx.backend.verify(msg.signed_part(), msg.signature, authority_key):
        return AbortReason.BAD_AUTHORITY_ATTESTATION
    if msg.refused:
        return AbortReason.BAD_AUTHORITY_ATTESTATION
    return None


def _with_attestation(session: ContractSession, msg: ReputationAttestation) -> dict:
    return dict(
        peer_key=msg.subject_key,
        peer_authority=msg.authority,
        peer_reputation=msg.reputation,
        peer_transactions=msg.transactions,
    )


def _expects_ack(session: ContractSession, nonce: Nonce, ctx: ContractContext) -> Optional[AbortReason]:
    """A reject/ack must carry N + 1 of our own nonce and be new."""
    if session.own_nonce is None or nonce != session.own_nonce.succ():
        return AbortReason.STALE_OR_REPLAY
    if not ctx.seen.check_and_remember(session.peer, nonce):
        return AbortReason.STALE_OR_REPLAY
    return None


def contract_advance(session: ContractSession, incoming: Incoming, ctx: ContractContext) -> Step:
    """One transition of the contract state machine.

    Returns the successor session and the messages to send. Never raises
    for protocol input; illegal input yields an ABORTED session.
    """
    if session.state.terminal:
        return session, []

    if isinstance(incoming, Timeout):
        if incoming.step != session.steps:
            return session, []
        return _abort(session, AbortReason.TIMEOUT)

    if session.role is SessionRole.INITIATOR:
        return _advance_initiator(session, incoming, ctx)
    return _advance_responder(session, incoming, ctx)


def _advance_initiator(session: ContractSession, incoming: Incoming, ctx: ContractContext) -> Step:
    state = session.state

    if state is SessionState.IDLE and isinstance(incoming, StartContract):
        n_a = ctx.fresh_nonce()
        params = incoming.params
        msg1 = ContractRequest(session.owner, params.share_size, params.duration, session.peer, n_a)
        return (
            _move(session, SessionState.SENT_1, own_params=params, own_nonce=n_a, transcript=(msg1.encode(),)),
            [Envelope(session.peer, msg1)],
        )

    if state is SessionState.SENT_1 and isinstance(incoming, ContractReject):
        if incoming.sender != session.peer or incoming.verdict != "Reject":
            return _abort(session, AbortReason.PROTOCOL_VIOLATION)
        reason = _expects_ack(session, incoming.nonce, ctx)
        if reason is not None:
            return _abort(session, reason)
        return _move(session, SessionState.REJECTED), []

    if state is SessionState.SENT_1 and isinstance(incoming, ContractCounter):
        if incoming.responder != session.peer or incoming.initiator != session.owner:
            return _abort(session, AbortReason.PROTOCOL_VIOLATION)
        if not ctx.seen.check_and_remember(session.peer, incoming.nonce):
            return _abort(session, AbortReason.STALE_OR_REPLAY)
        try:
            peer_params = TradeParams(incoming.share_size, incoming.duration)
        except ValueError:
            return _abort(session, AbortReason.PROTOCOL_VIOLATION)
        query_nonce = ctx.fresh_nonce()
        query = ReputationQuery(session.owner, session.peer, query_nonce)
        return (
            _move(
                session,
                SessionState.AWAIT_REP,
                peer_params=peer_params,
                peer_nonce=incoming.nonce,
                query_nonce=query_nonce,
                transcript=session.transcript + (incoming.encode(),),
            ),
            [Envelope(ctx.authority, query)],
        )

    if state is SessionState.AWAIT_REP and isinstance(incoming, ReputationAttestation):
        reason = _check_attestation(session, incoming, ctx)
        if reason is not None:
            return _abort(session, reason)
        assert session.peer_nonce is not None and session.peer_params is not None
        learned = _with_attestation(session, incoming)
        reply_nonce = session.peer_nonce.succ()
        if not ctx.decide(session.peer, incoming.reputation, incoming.transactions, session.peer_params):
            reject = ContractReject(session.owner, "Reject", reply_nonce)
            return _move(session, SessionState.REJECTED, **learned), [Envelope(session.peer, reject)]
        ack = ContractAck(session.owner, "Ack", reply_nonce)
        return (
            _move(session, SessionState.SENT_9, transcript=session.transcript + (ack.encode(),), **learned),
            [Envelope(session.peer, ack)],
        )

    if state is SessionState.SENT_9 and isinstance(incoming, SendHash):
        hashed = transcript_digest(session.transcript)
        msg10 = TranscriptHash(session.owner, 10, hashed, ctx.backend.sign(hashed, ctx.key, actor=ctx.node))
        return (
            _move(session, SessionState.AWAIT_HASH, transcript=session.transcript + (msg10.encode(),)),
            [Envelope(session.peer, msg10)],
        )

    if state is SessionState.AWAIT_HASH and isinstance(incoming, TranscriptHash):
        updated, _, outgoing = verify_transcript(session, incoming, ctx)
        return updated, outgoing

    return _abort(session, AbortReason.PROTOCOL_VIOLATION)


def _advance_responder(session: ContractSession, incoming: Incoming, ctx: ContractContext) -> Step:
    state = session.state

    if state is SessionState.IDLE and isinstance(incoming, ContractRequest):
        if incoming.responder != session.owner or incoming.initiator != session.peer:
            return _abort(session, AbortReason.PROTOCOL_VIOLATION)
        if not ctx.seen.check_and_remember(session.peer, incoming.nonce):
            return _abort(session, AbortReason.STALE_OR_REPLAY)
        try:
            peer_params = TradeParams(incoming.share_size, incoming.duration)
        except ValueError:
            return _abort(session, AbortReason.PROTOCOL_VIOLATION)
        query_nonce = ctx.fresh_nonce()
        query = ReputationQuery(session.owner, session.peer, query_nonce)
        return (
            _move(
                session,
                SessionState.AWAIT_REP,
                peer_params=peer_params,
                peer_nonce=incoming.nonce,
                query_nonce=query_nonce,
                transcript=(incoming.encode(),),
            ),
            [Envelope(ctx.authority, query)],
        )

    if state is SessionState.AWAIT_REP and isinstance(incoming, ReputationAttestation):
        reason = _check_attestation(session, incoming, ctx)
        if reason is not None:
            return _abort(session, reason)
        assert session.peer_nonce is not None and session.peer_params is not None
        learned = _with_attestation(session, incoming)
        if not ctx.decide(session.peer, incoming.reputation, incoming.transactions, session.peer_params):
            reject = ContractReject(session.owner, "Reject", session.peer_nonce.succ())
            return _move(session, SessionState.REJECTED, **learned), [Envelope(session.peer, reject)]
        n_b = ctx.fresh_nonce()
        own = ctx.counter_params(session.peer_params)
        counter = ContractCounter(session.owner, own.share_size, own.duration, session.peer, n_b)
        return (
            _move(
                session,
                SessionState.SENT_5,
                own_nonce=n_b,
                own_params=own,
                transcript=session.transcript + (counter.encode(),),
                **learned,
            ),
            [Envelope(session.peer, counter)],
        )

    if state is SessionState.SENT_5 and isinstance(incoming, ContractReject):
        if incoming.sender != session.peer or incoming.verdict != "Reject":
            return _abort(session, AbortReason.PROTOCOL_VIOLATION)
        reason = _expects_ack(session, incoming.nonce, ctx)
        if reason is not None:
            return _abort(session, reason)
        return _move(session, SessionState.REJECTED), []

    if state is SessionState.SENT_5 and isinstance(incoming, ContractAck):
        if incoming.initiator != session.peer or incoming.verdict != "Ack":
            return _abort(session, AbortReason.PROTOCOL_VIOLATION)
        reason = _expects_ack(session, incoming.nonce, ctx)
        if reason is not None:
            return _abort(session, reason)
        return _move(session, SessionState.AWAIT_HASH, transcript=session.transcript + (incoming.encode(),)), []

    if state is SessionState.AWAIT_HASH and isinstance(incoming, TranscriptHash):
        updated, _, outgoing = verify_transcript(session, incoming, ctx)
        return updated, outgoing

    return _abort(session, AbortReason.PROTOCOL_VIOLATION)


def verify_transcript(
    session: ContractSession, incoming: TranscriptHash, ctx: ContractContext
) -> Tuple[ContractSession, TranscriptVerdict, List[Envelope]]:
    """Messages 10/11: check the peer's signed transcript hash against ours.

    The responder answers message 10 with message 11 over its own
    transcript whatever the outcome, so the initiator learns it too.
    """
    expected_step = 10 if session.role is SessionRole.RESPONDER else 11
    if (
        session.state is not SessionState.AWAIT_HASH
        or incoming.step != expected_step
        or incoming.sender != session.peer
    ):
        aborted, _ = _abort(session, AbortReason.PROTOCOL_VIOLATION)
        return aborted, TranscriptVerdict.ABORTED, []

    local_hash = transcript_digest(session.transcript)
    genuine = session.peer_key is not None and ctx.backend.verify(
        incoming.transcript_hash, incoming.signature, session.peer_key
    )
    transcript = session.transcript
    if session.role is SessionRole.RESPONDER:
        transcript = transcript + (incoming.encode(),)

    reason: Optional[AbortReason] = None
    if not genuine:
        reason = AbortReason.FORGED_BINDING
    elif ctx.transcript_check and incoming.transcript_hash != local_hash:
        reason = AbortReason.TRANSCRIPT_MISMATCH

    outgoing: List[Envelope] = []
    if session.role is SessionRole.RESPONDER:
        own_hash = transcript_digest(transcript)
        msg11 = TranscriptHash(session.owner, 11, own_hash, ctx.backend.sign(own_hash, ctx.key, actor=ctx.node))
        outgoing.append(Envelope(session.peer, msg11))

    if reason is not None:
        aborted = _move(
            session, SessionState.ABORTED, transcript=transcript, abort_reason=reason, verdict=TranscriptVerdict.ABORTED
        )
        logger.info(f"{session.owner}/{session.session_id}: {reason.value}")
        return aborted, TranscriptVerdict.ABORTED, outgoing
    done = _move(session, SessionState.DONE, transcript=transcript, verdict=TranscriptVerdict.CONTRACT_BOUND)
    logger.info(f"{session.owner}/{session.session_id}: contract bound with {session.peer}")
    return done, TranscriptVerdict.CONTRACT_BOUND, outgoing
