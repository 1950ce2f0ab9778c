"""
Simulated servers.

A ServerNode is one pseudonymous server: always a leaf of some subtree,
and an authority while it holds a subtree key. Every protocol step it
takes goes through servnet_protocol; this class only routes messages to
the right step and records what happened in the event log.
"""

import logging
from dataclasses import replace
from fractions import Fraction
from typing import TYPE_CHECKING, Callable, Dict, List, Optional, Set, Tuple, TypeVar

from message_security import KeyPair, Nonce, PublicKeyId, Signature, SymmetricKey, TransactionId, UnsealError
from reputation_core import LocalScore
from servnet_protocol import (
    AuthorityDirectory,
    ContractContext,
    ContractSession,
    DbAccessError,
    DbClient,
    ElectionDecision,
    FeedbackError,
    FeedbackInbox,
    FeedbackPath,
    FeedbackSlot,
    FeedbackStatus,
    NodeRole,
    NonceCache,
    ProtocolError,
    RegistrationError,
    SendHash,
    ServerId,
    SessionRole,
    SessionState,
    StartContract,
    Timeout,
    TradeParams,
    contract_advance,
    elect_authority,
    forward_feedback,
    make_feedback,
    new_session,
    process_feedback,
    validate_feedback,
)
from servnet_protocol.authority import (
    accept_notice,
    begin_rotation,
    best_leaf,
    check_handover,
    confirm_rotation,
    make_handover,
)
from servnet_protocol.messages import (
    AuthorityChangeGrant,
    AuthorityChangeNotice,
    ContractAck,
    ContractCounter,
    ContractReject,
    ContractRequest,
    DirectoryHandover,
    FeedbackCopy,
    ProtocolMessage,
    RegistrationAck,
    RegistrationFlood,
    RegistrationIntro,
    ReputationAttestation,
    ReputationQuery,
    ReputationRelay,
    RevocationNotice,
    TranscriptHash,
)
from servnet_protocol.registration import handle_ack, handle_flood, handle_intro, start_registration
from servnet_protocol.revocation import apply_revocation_notice

from servnet_sim.scenario import Honesty, NodePolicy

if TYPE_CHECKING:
    from servnet_sim.engine import Sim

logger = logging.getLogger("servnet.sim.node")

T = TypeVar("T")

# Messages that only make sense at an authority; a demoted one passes them on.
AUTHORITY_BOUND = (ReputationQuery, ReputationRelay, RegistrationIntro, RegistrationFlood, RevocationNotice)


class ServerNode:
    def __init__(self, sim: "Sim", node_id: ServerId, policy: NodePolicy, keypair: KeyPair):
        self.sim = sim
        self.id = node_id
        self.policy = policy
        self.keypair = keypair
        self.role = NodeRole.LEAF
        self.authority: Optional[ServerId] = None
        self.present = False
        self.registered = False
        self.roster: Dict[ServerId, PublicKeyId] = {}
        self.sessions: Dict[str, ContractSession] = {}
        self.seen = NonceCache(enabled=sim.script.controls.nonce_cache)
        # nonces of queries and relays answered as an authority
        self.queries_seen = NonceCache(enabled=sim.script.controls.nonce_cache)
        self.used_capacity = 0
        self.bound: Set[TransactionId] = set()
        self.feedback_sent: Set[TransactionId] = set()
        self._session_counter = 0
        self._notices_seen: Set[int] = set()
        # authority state
        self.directory: Optional[AuthorityDirectory] = None
        self.subtree_key: Optional[SymmetricKey] = None
        self.db_client: Optional[DbClient] = None
        self.inbox = FeedbackInbox(node_id)
        self.successor: Optional[ServerId] = None
        self.rotating_to: Optional[ServerId] = None
        self.granted_key: Optional[SymmetricKey] = None
        self.handover_entries: Optional[List[Tuple[str, str, str]]] = None
        self._deferred_moves: List[Tuple[ServerId, ServerId]] = []
        self._held_for_install: List[Tuple[ServerId, ProtocolMessage]] = []
        # newcomer state
        self.registration_nonce: Optional[Nonce] = None

    def __repr__(self) -> str:
        return f"ServerNode({self.id}, {self.role.value}, authority={self.authority})"

    @property
    def is_authority(self) -> bool:
        return self.role is NodeRole.AUTHORITY

    @property
    def free_capacity(self) -> int:
        return self.policy.capacity - self.used_capacity

    def log(self, kind: str, **payload) -> None:
        self.sim.log.append(self.sim.tick, self.id, kind, **payload)

    def send(self, dst: ServerId, message: ProtocolMessage) -> None:
        self.sim.send(self.id, dst, message)

    def fresh_nonce(self) -> Nonce:
        return self.sim.nonces.fresh_nonce(self.id)

    # -- roles ----------------------------------------------------------------

    def install_authority(self, subtree_key: SymmetricKey, directory: AuthorityDirectory) -> None:
        self.role = NodeRole.AUTHORITY
        self.authority = self.id
        self.subtree_key = subtree_key
        self.directory = directory
        self.db_client = DbClient(self.sim.db, self.sim.backend, self.id, subtree_key)
        self.successor = None

    def demote(self, successor: ServerId) -> Optional[SymmetricKey]:
        stale = self.subtree_key
        self.role = NodeRole.LEAF
        self.authority = successor
        self.successor = successor
        self.subtree_key = None
        self.db_client = None
        self.directory = None
        self.rotating_to = None
        return stale

    def db(self, operation: str, call: Callable[[DbClient], T], client: Optional[DbClient] = None) -> Optional[T]:
        """One sealed DB call; failures become events."""
        client = client or self.db_client
        if client is None:
            self.log("db.denied", op=operation, reason="no subtree key held")
            return None
        try:
            result = call(client)
        except UnsealError as e:
            self.log("db.lockout", op=operation, reason=str(e))
            logger.warning(f"{self.id} locked out of the DB: {e}")
            return None
        except DbAccessError as e:
            self.log("db.denied", op=operation, reason=str(e))
            return None
        self.log("db.access", op=operation)
        return result

    # -- dispatch -------------------------------------------------------------

    def receive(self, src: ServerId, message: ProtocolMessage) -> None:
        authority_bound = isinstance(message, AUTHORITY_BOUND) or (
            isinstance(message, FeedbackCopy) and message.path != FeedbackPath.TO_TARGET.value
        )
        if authority_bound and not self.is_authority:
            if self.granted_key is not None:
                # replayed once the notice installs this node
                self._held_for_install.append((src, message))
                return
            self._pass_to_successor(message)
            return
        handler = {
            ContractRequest: self._on_contract_request,
            ContractCounter: self._on_session_message,
            ContractReject: self._on_session_message,
            ContractAck: self._on_session_message,
            TranscriptHash: self._on_session_message,
            ReputationAttestation: self._on_session_message,
            ReputationQuery: self._on_query,
            ReputationRelay: self._on_relay,
            FeedbackCopy: self._on_feedback_copy,
            RegistrationIntro: self._on_intro,
            RegistrationAck: self._on_registration_ack,
            RegistrationFlood: self._on_flood,
            AuthorityChangeGrant: self._on_grant,
            AuthorityChangeNotice: self._on_notice,
            DirectoryHandover: self._on_handover,
            RevocationNotice: self._on_revocation_notice,
        }.get(type(message))
        if handler is None:
            self.log("net.unexpected", src=src, message=message.KIND)
            return
        handler(src, message)  # type: ignore[operator]

    def _pass_to_successor(self, message: ProtocolMessage) -> None:
        if self.successor is None:
            self.log("net.dropped", message=message.KIND, reason="not an authority")
            return
        self.log("authority.forwarded", message=message.KIND, to=self.successor)
        self.send(self.successor, message)

    # -- contract -------------------------------------------------------------

    def context(self) -> ContractContext:
        assert self.authority is not None
        return ContractContext(
            node=self.id,
            backend=self.sim.backend,
            key=self.keypair.private,
            authority=self.authority,
            fresh_nonce=self.fresh_nonce,
            authorities=self.roster,
            decide=self._decide,
            counter_params=self._counter_params,
            seen=self.seen,
            transcript_check=self.sim.script.controls.transcript_check,
        )

    def _decide(self, peer: ServerId, reputation: Fraction, transactions: int, params: TradeParams) -> bool:
        if params.share_size > self.free_capacity:
            return False
        if transactions < self.policy.probation:
            return True
        return reputation >= self.policy.accept_threshold

    def _counter_params(self, params: TradeParams) -> TradeParams:
        return TradeParams(
            self.policy.counter_share_size or params.share_size,
            self.policy.counter_duration or params.duration,
        )

    def _open_session(self, role: SessionRole, peer: ServerId) -> ContractSession:
        self._session_counter += 1
        session = new_session(f"{self.id}#{self._session_counter}", role, self.id, peer)
        self.sessions[session.session_id] = session
        self.log("contract.opened", session=session.session_id, role=role.value, peer=peer)
        return session

    def start_contract(self, responder: ServerId, params: TradeParams) -> None:
        session = self._open_session(SessionRole.INITIATOR, responder)
        self.advance(session, StartContract(params))

    def advance(self, session: ContractSession, incoming) -> ContractSession:
        after, outgoing = contract_advance(session, incoming, self.context())
        self.sessions[after.session_id] = after
        if after.state is not session.state:
            self.log(
                "contract.state",
                session=after.session_id,
                peer=after.peer,
                role=after.role.value,
                before=session.state.value,
                after=after.state.value,
            )
        for envelope in outgoing:
            self.send(envelope.dst, envelope.message)
        if after.state is SessionState.ABORTED:
            assert after.abort_reason is not None
            self.log(
                "contract.aborted", session=after.session_id, peer=after.peer, role=after.role.value,
                reason=after.abort_reason.value,
            )
        elif after.state is SessionState.REJECTED:
            self.log("contract.rejected", session=after.session_id, peer=after.peer, role=after.role.value)
        elif after.state is SessionState.DONE and after.bound:
            self.log("contract.bound", session=after.session_id, peer=after.peer, role=after.role.value, txn=after.txn_id)
            self.sim.on_bound(self, after)
        elif after.state is SessionState.SENT_9:
            return self.advance(after, SendHash())
        if not after.state.terminal and after.steps != session.steps:
            self.sim.arm_session_timeout(self.id, after.session_id, after.steps)
        return after

    def on_session_timeout(self, session_id: str, step: int) -> None:
        session = self.sessions.get(session_id)
        if session is None or session.state.terminal:
            return
        self.advance(session, Timeout(step))

    @staticmethod
    def _nonce_of(message: ProtocolMessage) -> Optional[Tuple[ServerId, Nonce]]:
        if isinstance(message, ContractRequest):
            return message.initiator, message.nonce
        if isinstance(message, ContractCounter):
            return message.responder, message.nonce
        if isinstance(message, ContractReject):
            return message.sender, message.nonce
        if isinstance(message, ContractAck):
            return message.initiator, message.nonce
        if isinstance(message, ReputationAttestation):
            return message.authority, message.query_nonce
        return None

    def _is_replay(self, message: ProtocolMessage) -> bool:
        tagged = self._nonce_of(message)
        if tagged is not None and self.seen.seen(*tagged):
            self.log("replay.rejected", message=message.KIND, peer=tagged[0], nonce=tagged[1])
            return True
        return False

    def _on_contract_request(self, src: ServerId, message: ContractRequest) -> None:
        if not self.registered or self._is_replay(message):
            return
        if message.responder != self.id:
            self.log("contract.unroutable", message=message.KIND, peer=message.initiator)
            return
        session = self._open_session(SessionRole.RESPONDER, message.initiator)
        self.advance(session, message)

    def _find_session(self, message: ProtocolMessage) -> Optional[ContractSession]:
        def live(state: SessionState, peer: Optional[ServerId] = None) -> List[ContractSession]:
            return [
                s for _, s in sorted(self.sessions.items())
                if s.state is state and (peer is None or s.peer == peer)
            ]

        candidates: List[ContractSession] = []
        if isinstance(message, ReputationAttestation):
            candidates = [s for s in live(SessionState.AWAIT_REP) if s.query_nonce == message.query_nonce]
        elif isinstance(message, ContractCounter):
            candidates = [s for s in live(SessionState.SENT_1, message.responder) if s.role is SessionRole.INITIATOR]
        elif isinstance(message, ContractReject):
            waiting = live(SessionState.SENT_1, message.sender) + live(SessionState.SENT_5, message.sender)
            candidates = [s for s in waiting if s.own_nonce is not None and s.own_nonce.succ() == message.nonce] or waiting
        elif isinstance(message, ContractAck):
            waiting = live(SessionState.SENT_5, message.initiator)
            candidates = [s for s in waiting if s.own_nonce is not None and s.own_nonce.succ() == message.nonce] or waiting
        elif isinstance(message, TranscriptHash):
            candidates = live(SessionState.AWAIT_HASH, message.sender)
        return candidates[0] if candidates else None

    def _on_session_message(self, src: ServerId, message: ProtocolMessage) -> None:
        if self._is_replay(message):
            return
        session = self._find_session(message)
        if session is None:
            self.log("contract.unroutable", message=message.KIND, src=src)
            return
        self.advance(session, message)

    # -- reputation queries (authority) ----------------------------------------

    def _send_attestation(self, requester: ServerId, unsigned: ReputationAttestation) -> None:
        signature = self.sim.backend.sign(unsigned.signed_part(), self.keypair.private, actor=self.id)
        self.send(requester, replace(unsigned, signature=signature))

    def _refuse(self, requester: ServerId, subject: ServerId, query_nonce: Nonce) -> None:
        self.log("query.refused", requester=requester, subject=subject)
        refusal = ReputationAttestation.unsigned(self.id, subject, Fraction(0), 0, "", query_nonce, refused=True)
        self._send_attestation(requester, refusal)

    def _attest(self, requester: ServerId, subject: ServerId, query_nonce: Nonce) -> None:
        assert self.directory is not None
        record = None
        if self.directory.get_authority(subject) == self.id:
            record = self.db("read", lambda c: c.read(subject))
        if record is None:
            self._refuse(requester, subject, query_nonce)
            return
        self.log("query.answered", requester=requester, subject=subject, GR=record.reputation)
        answer = ReputationAttestation.unsigned(
            self.id, subject, record.reputation, record.ledger.transactions, record.public_key, query_nonce
        )
        self._send_attestation(requester, answer)

    def _on_query(self, src: ServerId, message: ReputationQuery) -> None:
        assert self.directory is not None
        if not self.queries_seen.check_and_remember(message.requester, message.nonce):
            self.log("replay.rejected", message=message.KIND, peer=message.requester, nonce=message.nonce)
            return
        subject_authority = self.directory.get_authority(message.subject)
        if subject_authority is None:
            self._refuse(message.requester, message.subject, message.nonce)
            return
        if subject_authority == self.id:
            self._attest(message.requester, message.subject, message.nonce)
            return
        relay_nonce = self.fresh_nonce()
        unsigned = ReputationRelay(
            self.id, message.requester, message.subject, message.nonce, relay_nonce, Signature(signer="", digest_of=b"")
        )
        signature = self.sim.backend.sign(unsigned.signed_part(), self.keypair.private, actor=self.id)
        self.log("query.relayed", requester=message.requester, subject=message.subject, to=subject_authority)
        self.send(subject_authority, replace(unsigned, signature=signature))

    def _on_relay(self, src: ServerId, message: ReputationRelay) -> None:
        key = self.roster.get(message.authority)
        if key is None or not self.sim.backend.verify(message.signed_part(), message.signature, key):
            self.log("query.bad_relay", claimed=message.authority, requester=message.requester)
            self._refuse(message.requester, message.subject, message.query_nonce)
            return
        if not self.queries_seen.check_and_remember(message.authority, message.relay_nonce):
            self.log("replay.rejected", message=message.KIND, peer=message.authority, nonce=message.relay_nonce)
            return
        self._attest(message.requester, message.subject, message.query_nonce)

    # -- feedback -------------------------------------------------------------

    def issue_feedback(self, txn: TransactionId, target: ServerId, target_authority: ServerId, score: int) -> None:
        via_target = -score if self.policy.honesty is Honesty.FALSE_SCORER else None
        try:
            envelopes = make_feedback(
                self.id, txn, score,
                target=target,
                target_authority=target_authority,
                backend=self.sim.backend,
                key=self.keypair.private,
                bound=self.bound,
                already_sent=self.feedback_sent,
                via_target_score=via_target,
            )
        except FeedbackError as e:
            self.log("feedback.refused", txn=txn, target=target, reason=str(e))
            return
        self.feedback_sent.add(txn)
        self.log("feedback.sent", txn=txn, target=target, score=score, authority=target_authority)
        for envelope in envelopes:
            self.send(envelope.dst, envelope.message)

    def _on_feedback_copy(self, src: ServerId, copy: FeedbackCopy) -> None:
        if copy.path == FeedbackPath.TO_TARGET.value:
            self._relay_feedback(copy)
        else:
            self._file_feedback(copy)

    def _relay_feedback(self, copy: FeedbackCopy) -> None:
        if copy.target != self.id or self.authority is None:
            self.log("feedback.misrouted", scorer=copy.feedback.scorer, target=copy.target)
            return
        if self.policy.honesty is Honesty.DROP_FEEDBACK and copy.feedback.score is LocalScore.NEGATIVE:
            self.log("feedback.dropped", scorer=copy.feedback.scorer, txn=copy.feedback.txn_id)
            return
        envelope = forward_feedback(copy, self.authority)
        self.log("feedback.forwarded", scorer=copy.feedback.scorer, txn=copy.feedback.txn_id, to=envelope.dst)
        self.send(envelope.dst, envelope.message)

    def _file_feedback(self, copy: FeedbackCopy) -> None:
        assert self.directory is not None
        msg = copy.feedback
        reason = validate_feedback(copy, self.sim.backend, self.directory.get_public_key(msg.scorer))
        if reason is None and not self.sim.book.is_party(msg.txn_id, msg.scorer, copy.target):
            reason = "unknown-transaction"
        if reason is not None:
            self.log("feedback.rejected", path=copy.path, scorer=msg.scorer, target=copy.target, reason=reason)
            return
        target_authority = self.directory.get_authority(copy.target)
        if target_authority is not None and target_authority != self.id:
            self.log("authority.forwarded", message=copy.KIND, to=target_authority)
            self.send(target_authority, copy)
            return
        slot, duplicate = self.inbox.receive(copy, self.sim.tick)
        if duplicate:
            self.log(
                "feedback.outcome", status=FeedbackStatus.DUPLICATE_IGNORED.value,
                txn=msg.txn_id, scorer=msg.scorer, target=copy.target, path=copy.path,
            )
            return
        self.log("feedback.received", path=copy.path, scorer=msg.scorer, target=copy.target, txn=msg.txn_id)
        if not self.decide_slot(slot, timed_out=False) and slot.first_arrival == self.sim.tick and (
            slot.direct is None or slot.forwarded is None
        ):
            self.sim.arm_feedback_timeout(self.id, slot)

    def decide_slot(self, slot: FeedbackSlot, timed_out: bool) -> bool:
        record = self.db("read", lambda c: c.read(slot.target))
        if record is None:
            return False
        scorer_reputation = self.sim.book.snapshot_of(slot.txn_id, slot.scorer)
        mode = self.sim.script.weight_mode
        outcome, ledger = process_feedback(slot, record.ledger, scorer_reputation, mode, timed_out=timed_out)
        if outcome is None:
            return False
        self.db("write", lambda c: c.write(slot.target, ledger))
        self.log(
            "feedback.outcome",
            status=outcome.status.value,
            txn=slot.txn_id,
            scorer=slot.scorer,
            target=slot.target,
            score=None if outcome.score is None else int(outcome.score),
            scorer_gr=scorer_reputation,
            mode=mode.value,
        )
        if outcome.status is FeedbackStatus.GIVER_CHEATING_FLAGGED and self.sim.script.cheater_penalty > 0:
            self.sim.penalize(slot.scorer, self.sim.script.cheater_penalty)
        return True

    # -- registration ---------------------------------------------------------

    def begin_join(self, authority: ServerId, roster: Dict[ServerId, PublicKeyId]) -> None:
        self.present = True
        self.registered = False
        self.roster = dict(roster)
        self.registration_nonce = self.fresh_nonce()
        intro = start_registration(self.id, self.keypair, self.sim.backend, self.registration_nonce)
        self.log("registration.started", authority=authority, public_key=self.keypair.public)
        self.send(authority, intro)

    def _on_intro(self, src: ServerId, intro: RegistrationIntro) -> None:
        assert self.directory is not None
        try:
            ack, floods = handle_intro(
                intro,
                authority=self.id,
                authority_key=self.keypair,
                backend=self.sim.backend,
                directory=self.directory,
                authorities=self.sim.authority_ids(),
            )
        except RegistrationError as e:
            self.log("registration.rejected", node=intro.node, reason=str(e))
            return
        record = self.db("create", lambda c: c.create(intro.node, intro.public_key))
        if record is None:
            self.directory.remove_node(intro.node)
            self.log("registration.rejected", node=intro.node, reason="DB record could not be created")
            return
        self.log("ledger.created", node=intro.node, authority=self.id)
        self.log("record.authority", node=intro.node, authority=self.id)
        self.log("registration.accepted", node=intro.node, floods=len(floods))
        self.send(intro.node, ack)
        for envelope in floods:
            self.send(envelope.dst, envelope.message)

    def _on_registration_ack(self, src: ServerId, ack: RegistrationAck) -> None:
        if self.registered or self.registration_nonce is None:
            self.log("registration.unexpected_ack", authority=ack.authority)
            return
        if not handle_ack(ack, newcomer=self.id, keypair=self.keypair, backend=self.sim.backend, sent=self.registration_nonce):
            self.log("registration.failed", authority=ack.authority, reason="acknowledgment mismatch")
            return
        self.registered = True
        self.role = NodeRole.LEAF
        self.authority = ack.authority
        self.registration_nonce = None
        self.log("registration.completed", authority=ack.authority)

    def _on_flood(self, src: ServerId, flood: RegistrationFlood) -> None:
        assert self.directory is not None
        try:
            handle_flood(flood, directory=self.directory, backend=self.sim.backend, authority_keys=self.roster)
        except RegistrationError as e:
            self.log("registration.flood_rejected", node=flood.intro.node, reason=str(e))
            return
        self.log("directory.added", node=flood.intro.node, authority=flood.authority)

    # -- elections and authority change ----------------------------------------

    def hold_election(self) -> None:
        if self.rotating_to is not None:
            self.log("alarm.rotation", old=self.id, new=self.rotating_to, reason="unresolved rotation")
            logger.warning(f"{self.id}: rotation to {self.rotating_to} never completed")
            self.rotating_to = None
            return
        records = self.db("subtree", lambda c: c.subtree())
        if records is None:
            return
        subtree = {r.node: r.reputation for r in records}
        result = elect_authority(subtree, self.id, self.sim.script.authority_factor)
        self.log(
            "election.held",
            decision=result.decision.value,
            contender=result.contender,
            current_gr=result.current_reputation,
            contender_gr=result.contender_reputation,
            factor=self.sim.script.authority_factor,
        )
        if result.decision is ElectionDecision.CHANGE and result.contender is not None:
            self.start_rotation(result.contender, reason="election")

    def successor_for_departure(self) -> Optional[ServerId]:
        records = self.db("subtree", lambda c: c.subtree())
        if records is None:
            return None
        return best_leaf({r.node: r.reputation for r in records}, self.id)

    def start_rotation(self, new: ServerId, reason: str) -> None:
        assert self.directory is not None and self.subtree_key is not None
        self.rotating_to = new
        backend = self.sim.backend
        self.send(new, make_handover(self.id, new, self.directory, backend, self.keypair))
        self.send(self.sim.db_id, begin_rotation(self.id, new, self.subtree_key, backend, self.fresh_nonce()))
        self.log("rotation.started", old=self.id, new=new, reason=reason)

    def _on_handover(self, src: ServerId, handover: DirectoryHandover) -> None:
        try:
            entries = check_handover(handover, self.sim.backend, self.roster.get(handover.authority))
        except ProtocolError as e:
            self.log("directory.handover_rejected", claimed=handover.authority, reason=str(e))
            return
        self.handover_entries = list(entries)  # type: ignore[arg-type]
        self.log("directory.handover_received", old=handover.authority, entries=len(entries))

    def _on_grant(self, src: ServerId, grant: AuthorityChangeGrant) -> None:
        try:
            confirm, key = confirm_rotation(
                grant, new=self.id, keypair=self.keypair, backend=self.sim.backend, db_key=self.sim.db.public_key
            )
        except ProtocolError as e:
            self.log("rotation.grant_rejected", reason=str(e))
            return
        self.granted_key = key
        self.log("rotation.confirmed", old=grant.notice.old_authority, nonce=grant.notice.nonce)
        self.send(self.sim.db_id, confirm)

    def _on_notice(self, src: ServerId, notice: AuthorityChangeNotice) -> None:
        if not accept_notice(notice, self.sim.backend, self.sim.db.public_key):
            self.log("notice.ignored", claimed_new=notice.new_authority, claimed_old=notice.old_authority)
            return
        if notice.nonce.value in self._notices_seen:
            self.log("notice.duplicate", nonce=notice.nonce)
            return
        self._notices_seen.add(notice.nonce.value)
        old, new = notice.old_authority, notice.new_authority
        self.log("notice.accepted", old=old, new=new, nonce=notice.nonce)
        self.roster.pop(old, None)
        self.roster[new] = notice.new_authority_key

        if self.id == new:
            self._take_over(old)
        elif self.id == old:
            self._step_down(new)
        else:
            if self.authority == old:
                self.authority = new
            if self.is_authority and self.directory is not None:
                self.directory.reassign_subtree(old, new)
            elif self.granted_key is not None or self.handover_entries is not None:
                # taking over; apply once the handed-over directory is installed
                self._deferred_moves.append((old, new))

    def _take_over(self, old: ServerId) -> None:
        if self.granted_key is None:
            self.log("alarm.rotation", old=old, reason="notice without a confirmed grant")
            return
        directory = AuthorityDirectory(self.id, self.handover_entries or [])
        if self.handover_entries is None:
            self.log("directory.handover_missing", old=old)
        directory.reassign_subtree(old, self.id)
        for moved_from, moved_to in self._deferred_moves:
            directory.reassign_subtree(moved_from, moved_to)
        self._deferred_moves.clear()
        self.install_authority(self.granted_key, directory)
        self.granted_key = None
        self.handover_entries = None
        self.db("subtree", lambda c: c.subtree())
        self.log("authority.installed", old=old, subtree=directory.subtree(self.id))
        held, self._held_for_install = self._held_for_install, []
        for src, message in held:
            self.receive(src, message)

    def _step_down(self, new: ServerId) -> None:
        pending, copies = self.inbox.hand_over()
        stale_key = self.demote(new)
        for copy in copies:
            self.send(new, copy)
        if copies:
            self.log("authority.feedback_handover", to=new, slots=len(pending), copies=len(copies))
        self.log("authority.demoted", new=new)
        if stale_key is not None:
            self.db(
                "stale-key-check", lambda c: c.subtree(),
                client=DbClient(self.sim.db, self.sim.backend, self.id, stale_key),
            )
        self.sim.after_demotion(self.id)

    # -- revocation -----------------------------------------------------------

    def _on_revocation_notice(self, src: ServerId, notice: RevocationNotice) -> None:
        assert self.directory is not None
        if apply_revocation_notice(notice, self.directory, self.sim.backend, self.roster):
            self.log("directory.removed", node=notice.leaving, by=notice.authority)
        else:
            self.log("revocation.notice_ignored", node=notice.leaving, claimed=notice.authority)

    def leave(self) -> None:
        self.present = False
        self.registered = False
        self.role = NodeRole.LEAF
        self.directory = None
        self.db_client = None
        self.subtree_key = None
        self.sessions.clear()
        self.used_capacity = 0
