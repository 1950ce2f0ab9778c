"""
Registration protocol

  1. A -> Auth:        A, PK_A, {A, PK_A, N_A}_SignA
  2. Auth -> A:        {N_A + 1}_{PK_A}
  3. Auth -> others:   the introduction, countersigned by Auth

The introduction is self-signed, so an authority accepts the binding of
pseudonym to key on first use; a pseudonym already in its directory is
refused.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

from message_security import (
    KeyPair,
    Nonce,
    PublicKeyId,
    SecurityBackend,
    UnsealError,
    encode_field,
)
from reputation_core import ScoreLedger, new_ledger

from servnet_protocol.contract import Envelope
from servnet_protocol.directory import AuthorityDirectory
from servnet_protocol.messages import RegistrationAck, RegistrationFlood, RegistrationIntro
from servnet_protocol.types import RegistrationError, ServerId

logger = logging.getLogger("servnet.registration")


def start_registration(
    newcomer: ServerId, keypair: KeyPair, backend: SecurityBackend, nonce: Nonce
) -> RegistrationIntro:
    signed = RegistrationIntro.signed_part(newcomer, keypair.public, nonce)
    return RegistrationIntro(
        node=newcomer,
        public_key=keypair.public,
        nonce=nonce,
        signature=backend.sign(signed, keypair.private, actor=newcomer),
    )


def check_intro(intro: RegistrationIntro, backend: SecurityBackend) -> None:
    signed = RegistrationIntro.signed_part(intro.node, intro.public_key, intro.nonce)
    if not backend.verify(signed, intro.signature, intro.public_key):
        raise RegistrationError(f"Introduction from {intro.node} is not signed by {intro.public_key}")


def handle_intro(
    intro: RegistrationIntro,
    *,
    authority: ServerId,
    authority_key: KeyPair,
    backend: SecurityBackend,
    directory: AuthorityDirectory,
    authorities: List[ServerId],
) -> Tuple[RegistrationAck, List[Envelope]]:
    """Authority side of steps 1 to 3.

    Raises:
        RegistrationError: bad signature or pseudonym already registered
    """
    check_intro(intro, backend)
    if directory.node_exists(intro.node):
        raise RegistrationError(f"Node {intro.node} already exists")
    directory.add_node(intro.node, authority, intro.public_key)
    ack = RegistrationAck(authority, backend.seal_for(encode_field(intro.nonce.succ()), intro.public_key))
    flood = RegistrationFlood(
        authority=authority,
        intro=intro,
        signature=backend.sign(RegistrationFlood.signed_part(authority, intro), authority_key.private, actor=authority),
    )
    floods = [Envelope(a, flood) for a in sorted(authorities) if a != authority]
    logger.info(f"{authority} registered {intro.node}, flooding {len(floods)} authorities")
    return ack, floods


def handle_ack(ack: RegistrationAck, *, newcomer: ServerId, keypair: KeyPair, backend: SecurityBackend, sent: Nonce) -> bool:
    """Newcomer side of step 2: true iff the ack opens to N_A + 1."""
    try:
        plaintext = backend.open_for(ack.box, keypair.private, actor=newcomer)
    except UnsealError:
        return False
    return plaintext == encode_field(sent.succ())


def handle_flood(
    flood: RegistrationFlood,
    *,
    directory: AuthorityDirectory,
    backend: SecurityBackend,
    authority_keys: Mapping[ServerId, PublicKeyId],
) -> None:
    """Peer authority side of step 3.

    Raises:
        RegistrationError: bad countersignature, bad introduction or duplicate
    """
    key = authority_keys.get(flood.authority)
    signed = RegistrationFlood.signed_part(flood.authority, flood.intro)
    if key is None or not backend.verify(signed, flood.signature, key):
        raise RegistrationError(f"Flood claiming {flood.authority} is not signed by it")
    check_intro(flood.intro, backend)
    if directory.node_exists(flood.intro.node):
        raise RegistrationError(f"Node {flood.intro.node} already exists")
    directory.add_node(flood.intro.node, flood.authority, flood.intro.public_key)


@dataclass
class RegistrationResult:
    accepted: bool
    ledger: Optional[ScoreLedger] = None
    directory_updates: List[Tuple[ServerId, ServerId, ServerId]] = field(default_factory=list)
    messages: List[Envelope] = field(default_factory=list)
    detail: str = ""


def registration_round(
    newcomer: ServerId,
    chosen_authority: ServerId,
    *,
    backend: SecurityBackend,
    keypair: KeyPair,
    nonce: Nonce,
    directories: Dict[ServerId, AuthorityDirectory],
    authority_keys: Dict[ServerId, KeyPair],
) -> RegistrationResult:
    """Run all three registration steps in one go, without a network.

    directory_updates lists (directory owner, node, authority) for every
    directory that gained the newcomer.
    """
    if chosen_authority not in directories:
        return RegistrationResult(False, detail=f"{chosen_authority} is not an authority")
    intro = start_registration(newcomer, keypair, backend, nonce)
    try:
        ack, floods = handle_intro(
            intro,
            authority=chosen_authority,
            authority_key=authority_keys[chosen_authority],
            backend=backend,
            directory=directories[chosen_authority],
            authorities=list(directories),
        )
    except RegistrationError as e:
        return RegistrationResult(False, detail=str(e))
    result = RegistrationResult(True, messages=[Envelope(newcomer, ack)] + floods)
    result.directory_updates.append((chosen_authority, newcomer, chosen_authority))
    public_keys = {a: k.public for a, k in authority_keys.items()}
    for envelope in floods:
        assert isinstance(envelope.message, RegistrationFlood)
        handle_flood(envelope.message, directory=directories[envelope.dst], backend=backend, authority_keys=public_keys)
        result.directory_updates.append((envelope.dst, newcomer, chosen_authority))
    if not handle_ack(ack, newcomer=newcomer, keypair=keypair, backend=backend, sent=nonce):
        return RegistrationResult(False, directory_updates=result.directory_updates, detail="acknowledgment mismatch")
    result.ledger = new_ledger(newcomer)
    return result
