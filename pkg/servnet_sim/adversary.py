"""
Scripted Dolev-Yao adversary.

The adversary controls the wire: it can read, drop, redirect, replay and
rewrite any message, and it can send whatever it likes under any name. It
holds only its own keys. Every attempt to sign or unseal with someone
else's key goes through the security backend and is refused there, so the
attacks below can only succeed where the protocol fails to check
something.
"""

import dataclasses
import logging
from fractions import Fraction
from typing import TYPE_CHECKING, Any, List, Optional, Tuple

from message_security import KeyNotHeldError, Nonce, Signature
from reputation_core import LocalScore
from servnet_protocol import ServerId
from servnet_protocol.messages import (
    AuthorityChangeNotice,
    AuthorityChangeRequest,
    ContractAck,
    ContractCounter,
    ContractRequest,
    FeedbackCopy,
    FeedbackMessage,
    ProtocolMessage,
    TranscriptHash,
)
from servnet_protocol.contract import transcript_digest

from servnet_sim.network import Interposer
from servnet_sim.scenario import AdversaryAction

if TYPE_CHECKING:
    from servnet_sim.engine import Sim

logger = logging.getLogger("servnet.adversary")

Routed = List[Tuple[ServerId, ServerId, ProtocolMessage]]


def coerce_field(current: Any, value: Any) -> Any:
    """Convert a scripted value to the type of the field it replaces."""
    if isinstance(current, Nonce):
        return Nonce(int(value))
    if isinstance(current, LocalScore):
        return LocalScore.coerce(int(value))
    if isinstance(current, bool):
        return bool(value)
    if isinstance(current, int):
        return int(value)
    if isinstance(current, Fraction):
        return Fraction(value)
    return str(value)


class Redirect(Interposer):
    """Send everything on one link to the adversary for a window of ticks."""

    name = "redirect"

    def __init__(self, src: ServerId, dst: ServerId, to: ServerId, start: int, window: int):
        self.src, self.dst, self.to = src, dst, to
        self.start, self.end = start, start + window

    def active(self, tick: int) -> bool:
        return self.start <= tick < self.end

    def intercept(self, tick: int, src: ServerId, dst: ServerId, message: ProtocolMessage) -> Optional[Routed]:
        if (src, dst) != (self.src, self.dst):
            return None
        return [(src, self.to, message)]


class Tamper(Interposer):
    """Rewrite one field of the next matching message on a link, once."""

    name = "tamper"

    def __init__(self, sim: "Sim", action: AdversaryAction):
        assert action.link is not None
        self.sim = sim
        self.src, self.dst = action.link
        self.kind = action.message
        self.field = action.field
        self.value = action.value
        self.fired = False

    def active(self, tick: int) -> bool:
        return not self.fired

    def intercept(self, tick: int, src: ServerId, dst: ServerId, message: ProtocolMessage) -> Optional[Routed]:
        if (src, dst) != (self.src, self.dst) or message.KIND != self.kind:
            return None
        self.fired = True
        names = message.field_names()
        if self.field not in names:
            self.sim.log.append(tick, self.sim.adversary_id, "adversary.tamper_failed", message=message.KIND,
                                field=self.field, reason="no such field")
            return None
        before = getattr(message, self.field)
        try:
            tampered = dataclasses.replace(message, **{self.field: coerce_field(before, self.value)})
        except (TypeError, ValueError) as e:
            self.sim.log.append(tick, self.sim.adversary_id, "adversary.tamper_failed", message=message.KIND,
                                field=self.field, reason=str(e))
            return None
        self.sim.log.append(tick, self.sim.adversary_id, "adversary.tampered", message=message.KIND, src=src, dst=dst,
                            field=self.field, before=str(before), after=str(getattr(tampered, self.field)))
        return [(src, dst, tampered)]


class Substitute(Interposer):
    """Swap the next same-kind message on a link for a previously captured one."""

    name = "substitute"

    def __init__(self, sim: "Sim", captured: ProtocolMessage, src: ServerId, dst: ServerId, start: int):
        self.sim = sim
        self.captured = captured
        self.src, self.dst = src, dst
        self.start = start
        self.fired = False

    def active(self, tick: int) -> bool:
        return not self.fired and tick >= self.start

    def intercept(self, tick: int, src: ServerId, dst: ServerId, message: ProtocolMessage) -> Optional[Routed]:
        if (src, dst) != (self.src, self.dst) or message.KIND != self.captured.KIND:
            return None
        self.fired = True
        self.sim.log.append(tick, self.sim.adversary_id, "adversary.replayed", message=message.KIND, src=src, dst=dst,
                            mode="substitute", digest=self.captured.fingerprint())
        return [(src, dst, self.captured)]


class AdversaryAgent:
    def __init__(self, sim: "Sim"):
        from servnet_sim.engine import derive_seed

        self.sim = sim
        self.id = sim.adversary_id
        self.keypair = sim.backend.keygen(derive_seed(sim.script.seed, self.id, "adversary"), owner=self.id)
        # (victim, target) pairs with an impersonated contract in flight
        self._impersonating: List[Tuple[ServerId, ServerId]] = []

    def log(self, kind: str, **payload: Any) -> None:
        self.sim.log.append(self.sim.tick, self.id, kind, **payload)

    def fresh_nonce(self) -> Nonce:
        return self.sim.nonces.fresh_nonce(self.id)

    def execute(self, action: AdversaryAction) -> None:
        handler = {
            "impersonate": self._impersonate,
            "mitm_tamper": self._tamper,
            "replay": self._replay,
            "fake_authority_msg": self._fake_authority_msg,
        }[action.kind]
        logger.info(f"tick {self.sim.tick}: adversary runs {action.kind}")
        handler(action)

    def _try_sign(self, message: bytes, victim: ServerId) -> Optional[Signature]:
        """Attempt a signature with the victim's key; the backend refuses it."""
        node = self.sim.nodes.get(victim)
        if node is None:
            return None
        try:
            return self.sim.backend.sign(message, node.keypair.private, actor=self.id)
        except KeyNotHeldError as e:
            self.log("adversary.sign_refused", victim=victim, reason=str(e))
            return None

    def _forged_signature(self, victim: ServerId, message: bytes) -> Signature:
        node = self.sim.nodes.get(victim)
        claimed = node.keypair.public if node is not None else victim
        return Signature(signer=claimed, digest_of=self.sim.backend.digest(message), blob=bytes(64))

    # -- impersonation --------------------------------------------------------

    def _impersonate(self, action: AdversaryAction) -> None:
        assert action.victim is not None and action.target is not None
        if action.protocol == "feedback":
            self._impersonate_feedback(action)
            return
        victim, target = action.victim, action.target
        self.sim.network.interpose(Redirect(target, victim, self.id, self.sim.tick, action.window))
        self._impersonating.append((victim, target))
        request = ContractRequest(victim, action.share_size, action.duration, target, self.fresh_nonce())
        self.log("adversary.impersonate", victim=victim, target=target, protocol="contract")
        self.sim.send(self.id, target, request)

    def receive(self, src: ServerId, message: ProtocolMessage) -> None:
        if isinstance(message, ContractCounter) and (message.initiator, message.responder) in self._impersonating:
            self._finish_impersonated_contract(message)
            return
        self.log("adversary.received", src=src, message=message.KIND)

    def _finish_impersonated_contract(self, counter: ContractCounter) -> None:
        victim, target = counter.initiator, counter.responder
        ack = ContractAck(victim, "Ack", counter.nonce.succ())
        self.sim.send(self.id, target, ack)
        # Reconstructing the target's transcript needs msg 1, which the adversary sent itself.
        sent = [t.message for t in self.sim.network.captured
                if t.src == self.id and t.dst == target and isinstance(t.message, ContractRequest)
                and t.message.initiator == victim]
        transcript = tuple(m.encode() for m in (sent[-1], counter, ack)) if sent else ()
        hashed = transcript_digest(transcript)
        signature = self._try_sign(hashed, victim) or self._forged_signature(victim, hashed)
        self.sim.send(self.id, target, TranscriptHash(victim, 10, hashed, signature))
        self._impersonating.remove((victim, target))

    def _impersonate_feedback(self, action: AdversaryAction) -> None:
        assert action.victim is not None and action.target is not None
        victim, target = action.victim, action.target
        record = self.sim.book.between(victim, target)
        if record is None:
            self.log("adversary.no_transaction", victim=victim, target=target)
            return
        score = LocalScore.coerce(action.score)
        body = FeedbackMessage.body(record.txn_id, score, victim)
        signature = self._try_sign(body, victim) or self._forged_signature(victim, body)
        forged = FeedbackMessage(victim, record.txn_id, score, victim, signature)
        self.log("adversary.impersonate", victim=victim, target=target, protocol="feedback", txn=record.txn_id)
        self.sim.send(self.id, target, FeedbackCopy("to-target", target, forged))
        authority = record.authority_seen.get(victim) or (self.sim.nodes[target].authority or target)
        self.sim.send(self.id, authority, FeedbackCopy("direct", target, forged))

    # -- wire attacks -----------------------------------------------------------

    def _tamper(self, action: AdversaryAction) -> None:
        self.sim.network.interpose(Tamper(self.sim, action))
        assert action.link is not None
        self.log("adversary.tamper_armed", link=list(action.link), message=action.message, field=action.field)

    def _replay(self, action: AdversaryAction) -> None:
        ref = action.capture
        assert ref is not None
        captured = self.sim.network.find_captured(ref.message, ref.src, ref.dst, ref.index)
        if captured is None:
            self.log("adversary.capture_missing", message=ref.message, src=ref.src, dst=ref.dst, index=ref.index)
            return
        if action.substitute:
            self.sim.network.interpose(Substitute(self.sim, captured.message, ref.src, ref.dst, self.sim.tick))
            self.log("adversary.substitute_armed", message=ref.message, src=ref.src, dst=ref.dst)
            return
        self.log("adversary.replayed", message=ref.message, src=ref.src, dst=ref.dst, mode="resend",
                 digest=captured.message.fingerprint())
        self.sim.send(ref.src, ref.dst, captured.message)

    # -- forged authority messages ------------------------------------------------

    def _fake_authority_msg(self, action: AdversaryAction) -> None:
        assert action.claim_new is not None and action.claim_old is not None
        backend = self.sim.backend
        if action.variant == "change_request":
            bogus = backend.new_symmetric_key(f"{self.id}-guess")
            box = backend.seal(AuthorityChangeRequest.sealed_part(action.claim_new, action.claim_old,
                                                                  self.fresh_nonce()), bogus)
            self.log("adversary.fake_authority_msg", variant="change_request", claim_new=action.claim_new,
                     claim_old=action.claim_old)
            self.sim.send(self.id, self.sim.db_id, AuthorityChangeRequest(action.claim_old, box))
            return
        nonce = self.fresh_nonce()
        body = AuthorityChangeNotice.body(action.claim_new, action.claim_old, self.keypair.public, nonce)
        signature = backend.sign(body, self.keypair.private, actor=self.id)
        notice = AuthorityChangeNotice(self.sim.db_id, action.claim_new, action.claim_old, self.keypair.public, nonce,
                                       signature)
        self.log("adversary.fake_authority_msg", variant="notice", claim_new=action.claim_new,
                 claim_old=action.claim_old)
        for node_id in self.sim.present_ids():
            self.sim.send(self.id, node_id, notice)
