"""
Discrete-event engine.

Time is integer ticks. Within a tick, queued work runs in phase order
(message deliveries, timers, trades, joins and departures, elections,
adversary actions) and in scheduling order within a phase, so a script
and its seed fully determine the event log.

Usage:
  sim = build_sim(load_scenario("data/scenarios/honest_pair.json"))
  log = run(sim)
  rows = snapshot_reputations(sim)
"""

import hashlib
import heapq
import logging
from dataclasses import dataclass, field
from enum import IntEnum
from fractions import Fraction
from typing import Any, Callable, Dict, List, Optional, Set, Tuple

import numpy as np

from message_security import KeyPair, NoncePool, TransactionId, UnsealError, make_backend
from reputation_core import ScoreLedger, WeightMode, apply_feedback, new_ledger
from servnet_protocol import (
    DB_SERVER_ID,
    AuthorityDirectory,
    ContractSession,
    DbRecord,
    DbServer,
    ProtocolError,
    ProtocolMessage,
    ServerId,
    ShareRecord,
    TradeParams,
    revoke_server,
)
from servnet_protocol.messages import AuthorityChangeConfirm, AuthorityChangeRequest

from servnet_sim.events import EventLog
from servnet_sim.network import Network
from servnet_sim.nodes import ServerNode
from servnet_sim.scenario import (
    AdversaryAction,
    DepartureEntry,
    JoinEntry,
    ScenarioScript,
    ScenarioValidationError,
    TradeEntry,
)

logger = logging.getLogger("servnet.sim")


class Phase(IntEnum):
    DELIVER = 0
    TIMER = 1
    TRADE = 2
    MEMBERSHIP = 3
    ELECTION = 4
    ADVERSARY = 5


def derive_seed(*parts: Any) -> int:
    """64-bit seed for one named key or stream, stable across runs."""
    text = ":".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(text).digest()[:8], "big")


@dataclass
class TxnRecord:
    txn_id: TransactionId
    initiator: ServerId
    responder: ServerId
    bound: Dict[ServerId, int] = field(default_factory=dict)
    snapshot: Dict[ServerId, Fraction] = field(default_factory=dict)
    params: Dict[ServerId, TradeParams] = field(default_factory=dict)
    authority_seen: Dict[ServerId, ServerId] = field(default_factory=dict)
    stored: bool = False

    @property
    def parties(self) -> Tuple[ServerId, ServerId]:
        return self.initiator, self.responder

    def other(self, party: ServerId) -> ServerId:
        return self.responder if party == self.initiator else self.initiator


class TransactionBook:
    """Bound transactions and the GR snapshot taken at each one's first bind."""

    def __init__(self):
        self._records: Dict[str, TxnRecord] = {}

    def get(self, txn: TransactionId) -> Optional[TxnRecord]:
        return self._records.get(str(txn))

    def bind(self, session: ContractSession, tick: int) -> Tuple[TxnRecord, bool]:
        """Record one side's bind. Returns (record, first bind of this transaction)."""
        txn = session.txn_id
        assert txn is not None
        record = self._records.get(str(txn))
        first = record is None
        if record is None:
            if session.role.value == "initiator":
                record = TxnRecord(txn, session.owner, session.peer)
            else:
                record = TxnRecord(txn, session.peer, session.owner)
            self._records[str(txn)] = record
        record.bound[session.owner] = tick
        if session.own_params is not None:
            record.params[session.owner] = session.own_params
        if session.peer_authority is not None:
            record.authority_seen[session.owner] = session.peer_authority
        return record, first

    def is_party(self, txn: TransactionId, scorer: ServerId, target: ServerId) -> bool:
        record = self.get(txn)
        return record is not None and scorer != target and {scorer, target} == set(record.parties)

    def snapshot_of(self, txn: TransactionId, node: ServerId) -> Fraction:
        record = self.get(txn)
        if record is None:
            return Fraction(0)
        return record.snapshot.get(node, Fraction(0))

    def between(self, a: ServerId, b: ServerId) -> Optional[TxnRecord]:
        """Most recent transaction both a and b are party to."""
        found = [r for r in self._records.values() if set(r.parties) == {a, b}]
        return found[-1] if found else None

    def __len__(self) -> int:
        return len(self._records)


class DbNode:
    """The DB server's presence on the network."""

    def __init__(self, sim: "Sim"):
        self.sim = sim

    def log(self, kind: str, **payload: Any) -> None:
        self.sim.log.append(self.sim.tick, self.sim.db_id, kind, **payload)

    def receive(self, src: ServerId, message: ProtocolMessage) -> None:
        if isinstance(message, AuthorityChangeRequest):
            self._on_change_request(message)
        elif isinstance(message, AuthorityChangeConfirm):
            self._on_change_confirm(message)
        else:
            self.log("net.unexpected", src=src, message=message.KIND)

    def _on_change_request(self, request: AuthorityChangeRequest) -> None:
        db = self.sim.db

        def public_key_of(node: ServerId) -> Optional[str]:
            record = db.record(node)
            return record.public_key if record is not None and record.active else None

        try:
            grant = db.handle_change_request(request, public_key_of, lambda: self.sim.nonces.fresh_nonce(self.sim.db_id))
        except (UnsealError, ProtocolError, ValueError) as e:
            self.log("rotation.rejected", claimed=request.authority, reason=str(e))
            return
        self.log("rotation.granted", old=grant.notice.old_authority, new=grant.notice.new_authority, nonce=grant.notice.nonce)
        self.sim.send(self.sim.db_id, grant.notice.new_authority, grant)

    def _on_change_confirm(self, confirm: AuthorityChangeConfirm) -> None:
        db = self.sim.db
        try:
            outcome = db.handle_change_confirm(confirm)
        except ProtocolError as e:
            self.log("rotation.rejected", claimed=confirm.authority, reason=str(e))
            return
        if not outcome.committed:
            self.log("rotation.rolled_back", old=outcome.old, new=outcome.new, reason=outcome.detail)
            self.log("alarm.rotation", old=outcome.old, new=outcome.new, reason=outcome.detail)
            old = self.sim.nodes.get(outcome.old)
            if old is not None:
                old.rotating_to = None
            return
        self.log(
            "rotation.committed", old=outcome.old, new=outcome.new, nonce=outcome.nonce, members=list(outcome.moved)
        )
        for node in outcome.moved:
            self.log("record.authority", node=node, authority=outcome.new)
        assert outcome.notice is not None
        for node_id in self.sim.present_ids():
            self.sim.send(self.sim.db_id, node_id, outcome.notice)


class Sim:
    def __init__(self, script: ScenarioScript):
        self.script = script
        self.tick = 0
        self.db_id: ServerId = DB_SERVER_ID
        self.adversary_id: ServerId = script.adversary_id
        self.backend = make_backend(script.security_backend, script.seed)
        self.nonces = NoncePool(script.seed)
        self.rng = np.random.default_rng(script.seed)
        self.log = EventLog()
        self.network = Network(script.link_delay, {(d.src, d.dst): d.delay for d in script.link_delays})
        self.book = TransactionBook()
        self.shares: List[ShareRecord] = []
        self.nodes: Dict[ServerId, ServerNode] = {}
        self.pending_departures: Set[ServerId] = set()
        self.departed: Set[ServerId] = set()
        self._incarnations: Dict[ServerId, int] = {}
        self._queue: List[Tuple[int, int, int, Callable[..., None], Tuple[Any, ...]]] = []
        self._seq = 0
        self.db_keypair = self.backend.keygen(derive_seed(script.seed, self.db_id, "db"), owner=self.db_id)
        self.db = DbServer(self.backend, self.db_keypair, name=self.db_id)
        self.db_node = DbNode(self)
        # Imported here: the adversary module needs the engine's types.
        from servnet_sim.adversary import AdversaryAgent

        self.adversary = AdversaryAgent(self)

    # -- scheduling -----------------------------------------------------------

    def schedule(self, tick: int, phase: Phase, callback: Callable[..., None], *args: Any) -> None:
        if tick < self.tick:
            raise ValueError(f"Cannot schedule at tick {tick}, already at {self.tick}")
        heapq.heappush(self._queue, (tick, int(phase), self._seq, callback, args))
        self._seq += 1

    def run_until(self, until: int) -> None:
        while self._queue and self._queue[0][0] <= until:
            tick, _, _, callback, args = heapq.heappop(self._queue)
            self.tick = tick
            callback(*args)
        self.tick = max(self.tick, until)

    def pending_work(self) -> int:
        return len(self._queue)

    # -- network --------------------------------------------------------------

    def send(self, src: ServerId, dst: ServerId, message: ProtocolMessage) -> None:
        routed, touched = self.network.route(self.tick, src, dst, message)
        for name in touched:
            self.log.append(self.tick, self.adversary_id, "adversary.intercepted", interposer=name, src=src, dst=dst,
                            message=message.KIND)
        for s, d, m in routed:
            deliver_at = self.network.schedule(self.tick, s, d, m)
            self.log.append(self.tick, s, "net.send", dst=d, message=m.KIND, digest=m.fingerprint(), deliver_at=deliver_at)
            self.schedule(deliver_at, Phase.DELIVER, self._deliver, s, d, m)

    def _deliver(self, src: ServerId, dst: ServerId, message: ProtocolMessage) -> None:
        if dst == self.db_id:
            self.log.append(self.tick, dst, "net.deliver", src=src, message=message.KIND, digest=message.fingerprint())
            self.db_node.receive(src, message)
            return
        if dst == self.adversary_id:
            self.log.append(self.tick, dst, "net.deliver", src=src, message=message.KIND, digest=message.fingerprint())
            self.adversary.receive(src, message)
            return
        node = self.nodes.get(dst)
        if node is None or not node.present:
            self.log.append(self.tick, dst, "net.undeliverable", src=src, message=message.KIND)
            return
        self.log.append(self.tick, dst, "net.deliver", src=src, message=message.KIND, digest=message.fingerprint())
        node.receive(src, message)

    # -- membership queries ---------------------------------------------------

    def present_ids(self) -> List[ServerId]:
        return sorted(n for n, node in self.nodes.items() if node.present)

    def authority_ids(self) -> List[ServerId]:
        return sorted(n for n, node in self.nodes.items() if node.present and node.is_authority)

    def public_roster(self) -> Dict[ServerId, str]:
        return {a: self.nodes[a].keypair.public for a in self.authority_ids()}

    def current_authority(self, node_id: ServerId) -> Optional[ServerNode]:
        """The authority node now serving node_id's subtree, following successors."""
        record = self.db.record(node_id)
        if record is None or not record.active:
            return None
        holder = self.nodes.get(record.authority)
        while holder is not None and not holder.is_authority and holder.successor is not None:
            holder = self.nodes.get(holder.successor)
        return holder if holder is not None and holder.is_authority else None

    def keypair_for(self, node_id: ServerId) -> KeyPair:
        incarnation = self._incarnations.get(node_id, 0) + 1
        self._incarnations[node_id] = incarnation
        return self.backend.keygen(derive_seed(self.script.seed, node_id, incarnation), owner=node_id)

    # -- setup ----------------------------------------------------------------

    def _draw_authorities(self) -> List[ServerId]:
        roster = self.script.initial_roster
        fixed = sorted(n.id for n in roster if n.role == "authority")
        eligible = sorted(n.id for n in roster if n.role == "auto")
        needed = self.script.authority_count - len(fixed)
        drawn: List[ServerId] = []
        if needed > 0:
            drawn = [str(x) for x in self.rng.choice(eligible, size=needed, replace=False)]
        return sorted(fixed + drawn)

    def setup(self) -> None:
        script = self.script
        for spec in script.nodes:
            self.nodes[spec.id] = ServerNode(self, spec.id, spec.policy, self.keypair_for(spec.id))

        authorities = self._draw_authorities()
        authority_of: Dict[ServerId, ServerId] = {}
        problems = []
        for spec in sorted(script.initial_roster, key=lambda n: n.id):
            if spec.id in authorities:
                authority_of[spec.id] = spec.id
            elif spec.authority is not None:
                if spec.authority not in authorities:
                    problems.append(f"nodes: {spec.id} names {spec.authority}, which is not an initial authority")
                authority_of[spec.id] = spec.authority
            else:
                authority_of[spec.id] = authorities[int(self.rng.integers(len(authorities)))]
        if problems:
            raise ScenarioValidationError(problems)

        entries = [(n, authority_of[n], self.nodes[n].keypair.public) for n in sorted(authority_of)]
        for authority in authorities:
            key = self.db.issue_subtree_key(authority)
            self.nodes[authority].install_authority(key, AuthorityDirectory(authority, entries))
            self.log.append(0, authority, "setup.authority", subtree=sorted(n for n, a in authority_of.items() if a == authority))

        seeds = {s.node: s for s in script.seed_ledgers}
        for node_id in sorted(authority_of):
            node = self.nodes[node_id]
            seed = seeds.get(node_id)
            ledger = new_ledger(node_id)
            self.log.append(0, self.db_id, "ledger.created", node=node_id, authority=authority_of[node_id])
            if seed is not None:
                ledger = ScoreLedger(node_id, seed.T, seed.POS, seed.NEG)
                self.log.append(0, self.db_id, "ledger.seeded", node=node_id, T=seed.T, POS=seed.POS, NEG=seed.NEG)
            self.db.seed_record(DbRecord(node_id, ledger, authority_of[node_id], node.keypair.public))
            self.log.append(0, self.db_id, "record.authority", node=node_id, authority=authority_of[node_id])
            node.present = True
            node.registered = True
            node.authority = authority_of[node_id]

        roster = self.public_roster()
        for node_id in authority_of:
            self.nodes[node_id].roster = dict(roster)

        for entry in sorted(script.trade_schedule, key=lambda t: t.tick):
            self.schedule(entry.tick, Phase.TRADE, self._start_trade, entry)
        for join in sorted(script.joins, key=lambda j: j.tick):
            self.schedule(join.tick, Phase.MEMBERSHIP, self._join, join)
        for departure in sorted(script.departures, key=lambda d: d.tick):
            self.schedule(departure.tick, Phase.MEMBERSHIP, self._depart, departure)
        self.schedule(script.election_period, Phase.ELECTION, self._election_tick)
        logger.info(f"built {script.name}: {len(authority_of)} nodes, authorities {authorities}")

    # -- trades, shares and feedback --------------------------------------------

    def _start_trade(self, entry: TradeEntry) -> None:
        initiator = self.nodes[entry.initiator]
        if not initiator.registered:
            self.log.append(self.tick, entry.initiator, "trade.skipped", responder=entry.responder, reason="not registered")
            return
        initiator.start_contract(entry.responder, TradeParams(entry.share_size, entry.duration))

    def arm_session_timeout(self, node_id: ServerId, session_id: str, step: int) -> None:
        self.schedule(self.tick + self.script.query_timeout, Phase.TIMER, self._session_timeout, node_id, session_id, step)

    def _session_timeout(self, node_id: ServerId, session_id: str, step: int) -> None:
        node = self.nodes.get(node_id)
        if node is not None and node.present:
            node.on_session_timeout(session_id, step)

    def on_bound(self, node: ServerNode, session: ContractSession) -> None:
        record, first = self.book.bind(session, self.tick)
        assert session.txn_id is not None
        node.bound.add(session.txn_id)
        if first:
            for party in record.parties:
                db_record = self.db.record(party)
                record.snapshot[party] = db_record.reputation if db_record is not None else Fraction(0)
            self.log.append(self.tick, node.id, "book.snapshot", txn=record.txn_id, gr=dict(record.snapshot))
        if len(record.bound) == 2 and not record.stored:
            self._store_shares(record)

    def _store_shares(self, record: TxnRecord) -> None:
        record.stored = True
        for owner in record.parties:
            holder = record.other(owner)
            params = record.params.get(owner)
            if params is None:
                continue
            share = ShareRecord(owner, holder, params.share_size, self.tick + params.duration, record.txn_id)
            self.shares.append(share)
            self.nodes[holder].used_capacity += share.size
            self.log.append(self.tick, holder, "share.stored", owner=owner, size=share.size, expiry=share.expiry,
                            txn=record.txn_id)
            self.schedule(share.expiry, Phase.TIMER, self._share_expired, share)

    def _share_expired(self, share: ShareRecord) -> None:
        if share.settled or not share.live:
            return
        share.live = False
        holder = self.nodes[share.holder]
        if holder.present:
            holder.used_capacity = max(0, holder.used_capacity - share.size)
        owner = self.nodes[share.owner]
        if not owner.registered:
            self.log.append(self.tick, share.owner, "share.expired", holder=share.holder, txn=share.txn_id, scored=False)
            return
        retrievable = holder.present and holder.policy.stores_reliably
        self.log.append(self.tick, share.owner, "share.checked", holder=share.holder, txn=share.txn_id,
                        retrievable=retrievable)
        record = self.book.get(share.txn_id)
        target_authority = record.authority_seen.get(share.owner) if record is not None else None
        if target_authority is None:
            target_authority = holder.authority or share.holder
        owner.issue_feedback(share.txn_id, share.holder, target_authority, 1 if retrievable else -1)

    def arm_feedback_timeout(self, authority_id: ServerId, slot) -> None:
        self.schedule(
            self.tick + self.script.feedback_timeout, Phase.TIMER, self._feedback_timeout,
            authority_id, slot.txn_id, slot.scorer,
        )

    def _feedback_timeout(self, authority_id: ServerId, txn: TransactionId, scorer: ServerId) -> None:
        holder = self.nodes.get(authority_id)
        while holder is not None and not holder.is_authority and holder.successor is not None:
            holder = self.nodes.get(holder.successor)
        if holder is None or not holder.is_authority:
            return
        slot = holder.inbox.get(txn, scorer)
        if slot is not None and not slot.decided:
            holder.decide_slot(slot, timed_out=True)

    def penalize(self, node_id: ServerId, weight: Fraction) -> None:
        authority = self.current_authority(node_id)
        if authority is None:
            return
        record = authority.db("read", lambda c: c.read(node_id))
        if record is None:
            return
        ledger = apply_feedback(record.ledger, -1, weight, WeightMode.REPUTATION_WEIGHTED)
        if authority.db("write", lambda c: c.write(node_id, ledger)) is not None:
            self.log.append(self.tick, authority.id, "ledger.penalty", node=node_id, weight=weight)

    # -- elections ------------------------------------------------------------

    def _election_tick(self) -> None:
        for authority_id in self.authority_ids():
            if authority_id in self.pending_departures:
                continue
            self.nodes[authority_id].hold_election()
        self.schedule(self.tick + self.script.election_period, Phase.ELECTION, self._election_tick)

    # -- joins and departures ---------------------------------------------------

    def _join(self, entry: JoinEntry) -> None:
        existing = self.nodes[entry.node]
        if existing.present:
            self.log.append(self.tick, entry.node, "registration.skipped", reason="already present")
            return
        node = existing
        if entry.node in self.departed:
            self.departed.discard(entry.node)
            node = ServerNode(self, entry.node, existing.policy, self.keypair_for(entry.node))
            self.nodes[entry.node] = node
        node.begin_join(entry.authority, self.public_roster())

    def _depart(self, entry: DepartureEntry) -> None:
        node = self.nodes.get(entry.node)
        if node is None or not node.registered:
            self.log.append(self.tick, entry.node, "revocation.unknown", reason="not a registered server")
            logger.warning(f"revocation of unknown server {entry.node} ignored")
            return
        if node.is_authority:
            successor = node.successor_for_departure()
            if successor is not None:
                self.pending_departures.add(node.id)
                node.start_rotation(successor, reason="departure")
                return
        self.complete_departure(node.id)

    def after_demotion(self, node_id: ServerId) -> None:
        if node_id in self.pending_departures:
            self.schedule(self.tick, Phase.MEMBERSHIP, self.complete_departure, node_id)

    def complete_departure(self, leaving: ServerId) -> None:
        self.pending_departures.discard(leaving)
        node = self.nodes[leaving]
        if not node.registered:
            return
        authority = node if node.is_authority else self.current_authority(leaving)
        if authority is None or authority.db_client is None:
            self.log.append(self.tick, leaving, "revocation.failed", reason="no authority of record")
            return
        others = [a for a in self.authority_ids()]
        try:
            result = revoke_server(
                leaving,
                authority=authority.id,
                shares=self.shares,
                client=authority.db_client,
                backend=self.backend,
                keypair=authority.keypair,
                nonce=authority.fresh_nonce(),
                authorities=others,
            )
        except (UnsealError, ProtocolError) as e:
            self.log.append(self.tick, authority.id, "revocation.failed", node=leaving, reason=str(e))
            return
        authority.log("db.access", op="revoke")
        for kind, payload in result.events:
            self.log.append(self.tick, authority.id, kind, **payload)
        for share in result.plan.returns:
            owner = self.nodes.get(share.owner)
            if owner is not None:
                owner.bound.discard(share.txn_id)
        if node.is_authority:
            node.db("retire", lambda c: c.retire())
        for envelope in result.messages:
            if envelope.dst != leaving:
                self.send(authority.id, envelope.dst, envelope.message)
        if node.is_authority and node.directory is not None and node.directory.node_exists(leaving):
            node.directory.remove_node(leaving)
        node.leave()
        self.departed.add(leaving)
        self.log.append(self.tick, leaving, "revocation.completed", authority=authority.id)


def build_sim(script: ScenarioScript) -> Sim:
    """A ready-to-run simulation for a validated scenario.

    Raises:
        ScenarioValidationError: the script cannot be set up as written
    """
    sim = Sim(script)
    sim.setup()
    for i, action in enumerate(script.adversaries):
        try:
            inject_adversary(sim, action)
        except ValueError as e:
            raise ScenarioValidationError([f"adversaries[{i}]: {e}"]) from None
    return sim


def run(sim: Sim, until: Optional[int] = None) -> EventLog:
    """Process every queued event up to and including tick `until` (default: the scenario's duration)."""
    sim.run_until(sim.script.duration if until is None else until)
    return sim.log


def inject_adversary(sim: Sim, action: AdversaryAction) -> Sim:
    """Queue one adversary action.

    Raises:
        ValueError: the action scripts possession of a key the adversary does not hold
    """
    if action.with_key_of is not None and action.with_key_of != sim.adversary_id:
        raise ValueError(
            f"the adversary cannot be scripted to hold {action.with_key_of}'s private key (signatures are unforgeable)"
        )
    if action.at_tick < sim.tick:
        raise ValueError(f"action at tick {action.at_tick} is in the past (now {sim.tick})")
    sim.schedule(action.at_tick, Phase.ADVERSARY, sim.adversary.execute, action)
    return sim
