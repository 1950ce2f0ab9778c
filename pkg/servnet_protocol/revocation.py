"""
Server revocation: a server leaves the network.

Its authority settles the shares it still holds (returned to their owners
while the contract is live, one residual transfer to the authority for
the rest), resets its ledger and floods a signed notice so every
directory forgets the pseudonym.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Tuple

from message_security import KeyPair, Nonce, PublicKeyId, SecurityBackend, TransactionId
from reputation_core import ScoreLedger

from servnet_protocol.contract import Envelope
from servnet_protocol.database import DbClient
from servnet_protocol.directory import AuthorityDirectory
from servnet_protocol.messages import RevocationNotice
from servnet_protocol.types import ServerId

logger = logging.getLogger("servnet.revocation")

RevocationEvent = Tuple[str, Dict[str, Any]]


@dataclass
class ShareRecord:
    """One stored share: owner's data held by holder until expiry."""

    owner: ServerId
    holder: ServerId
    size: int
    expiry: int
    txn_id: TransactionId
    live: bool = True
    settled: bool = False


@dataclass
class RevocationPlan:
    leaving: ServerId
    returns: List[ShareRecord] = field(default_factory=list)
    residual: List[ShareRecord] = field(default_factory=list)


def plan_revocation(leaving: ServerId, shares: List[ShareRecord]) -> RevocationPlan:
    plan = RevocationPlan(leaving)
    for share in shares:
        if share.holder != leaving or share.settled:
            continue
        (plan.returns if share.live else plan.residual).append(share)
    return plan


def make_revocation_notice(
    authority: ServerId, leaving: ServerId, backend: SecurityBackend, keypair: KeyPair, nonce: Nonce
) -> RevocationNotice:
    signature = backend.sign(RevocationNotice.body(authority, leaving, nonce), keypair.private, actor=authority)
    return RevocationNotice(authority=authority, leaving=leaving, nonce=nonce, signature=signature)


def apply_revocation_notice(
    notice: RevocationNotice,
    directory: AuthorityDirectory,
    backend: SecurityBackend,
    authority_keys: Mapping[ServerId, PublicKeyId],
) -> bool:
    """Drop the leaving node from directory. False if the notice is not genuine or already applied."""
    key = authority_keys.get(notice.authority)
    if key is None or not backend.verify(notice.signed_part(), notice.signature, key):
        logger.warning(f"{directory.owner}: ignoring unsigned revocation of {notice.leaving}")
        return False
    if not directory.node_exists(notice.leaving):
        return False
    directory.remove_node(notice.leaving)
    return True


@dataclass
class RevocationResult:
    plan: RevocationPlan
    ledger: Optional[ScoreLedger]
    notice: RevocationNotice
    messages: List[Envelope]
    events: List[RevocationEvent]


def revoke_server(
    leaving: ServerId,
    *,
    authority: ServerId,
    shares: List[ShareRecord],
    client: DbClient,
    backend: SecurityBackend,
    keypair: KeyPair,
    nonce: Nonce,
    authorities: List[ServerId],
) -> RevocationResult:
    """Settle, reset and announce one departure.

    The caller has already moved an outgoing authority's subtree to a
    successor; authority here is the leaving node's authority of record.
    """
    plan = plan_revocation(leaving, shares)
    events: List[RevocationEvent] = []
    for share in plan.returns:
        share.live = False
        share.settled = True
        events.append(("transfer.return", {"from": leaving, "to": share.owner, "size": share.size, "txn": str(share.txn_id)}))
    if plan.residual:
        total = sum(s.size for s in plan.residual)
        for share in plan.residual:
            share.settled = True
        events.append(("transfer.residual", {"from": leaving, "to": authority, "shares": len(plan.residual), "size": total}))

    record = client.revoke(leaving)
    events.append(("ledger.reset", {"node": leaving}))
    logger.info(f"{authority} revoked {leaving}: {len(plan.returns)} returned, {len(plan.residual)} residual")

    notice = make_revocation_notice(authority, leaving, backend, keypair, nonce)
    messages = [Envelope(a, notice) for a in sorted(authorities)]
    return RevocationResult(plan, record.ledger, notice, messages, events)
