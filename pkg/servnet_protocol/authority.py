"""
Authority election and authority change

Every election period each authority compares itself with the best leaf
of its subtree and steps down when that leaf's reputation exceeds
factor * its own. The change itself is three messages with the DB:

  1. Auth_Old -> DB:   {Auth_New, Auth_Old, N}_{K_DBA}
  2. DB -> Auth_New:   {K_New, Auth_New, N_DB}_{PK_New} signed by DB
                       and (Auth_New, Auth_Old, N_DB)_SignDB for the leaves
  3. Auth_New -> DB:   {N_DB + 1}_{K_New}

The DB's side lives in servnet_protocol.database.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Callable, List, Mapping, Optional, Tuple

from message_security import (
    KeyPair,
    Nonce,
    PublicKeyId,
    SecurityBackend,
    Signature,
    SymmetricKey,
    UnsealError,
    split_fields,
)
from message_security.encoding import SIGNATURE_TAG
from servnet_protocol.database import DbServer, RotationOutcome
from servnet_protocol.directory import AuthorityDirectory, DirectoryEntry
from servnet_protocol.messages import (
    AuthorityChangeConfirm,
    AuthorityChangeGrant,
    AuthorityChangeNotice,
    AuthorityChangeRequest,
    DirectoryHandover,
)
from servnet_protocol.types import ProtocolError, ServerId

logger = logging.getLogger("servnet.authority")

DEFAULT_ELECTION_PERIOD = 100
DEFAULT_AUTHORITY_FACTOR = Fraction(1, 2)


class ElectionDecision(str, Enum):
    KEEP = "KEEP"
    CHANGE = "CHANGE"


@dataclass(frozen=True)
class ElectionResult:
    decision: ElectionDecision
    current: ServerId
    contender: Optional[ServerId] = None
    current_reputation: Fraction = Fraction(0)
    contender_reputation: Fraction = Fraction(0)

    @property
    def successor(self) -> ServerId:
        return self.contender if self.decision is ElectionDecision.CHANGE and self.contender else self.current


def best_leaf(subtree: Mapping[ServerId, Fraction], current: ServerId) -> Optional[ServerId]:
    """Highest-GR leaf; ties go to the lexicographically smallest pseudonym."""
    leaves = [(-Fraction(gr), node) for node, gr in subtree.items() if node != current]
    if not leaves:
        return None
    return min(leaves)[1]


def elect_authority(
    subtree: Mapping[ServerId, Fraction], current: ServerId, factor: Fraction = DEFAULT_AUTHORITY_FACTOR
) -> ElectionResult:
    """KEEP or CHANGE for one subtree.

    CHANGE iff GR(contender) > factor * GR(current), strictly; equal
    reputations never trigger a change.
    """
    current_gr = Fraction(subtree.get(current, 0))
    contender = best_leaf(subtree, current)
    if contender is None:
        return ElectionResult(ElectionDecision.KEEP, current, None, current_gr)
    contender_gr = Fraction(subtree[contender])
    decision = ElectionDecision.CHANGE if contender_gr > Fraction(factor) * current_gr else ElectionDecision.KEEP
    logger.debug(f"election in {current}'s subtree: {contender} {contender_gr} vs {current_gr} -> {decision.value}")
    return ElectionResult(decision, current, contender, current_gr, contender_gr)


def begin_rotation(
    old: ServerId, new: ServerId, subtree_key: SymmetricKey, backend: SecurityBackend, nonce: Nonce
) -> AuthorityChangeRequest:
    """Message 1, sealed with the outgoing authority's current subtree key."""
    box = backend.seal(AuthorityChangeRequest.sealed_part(new, old, nonce), subtree_key)
    return AuthorityChangeRequest(authority=old, box=box)


def _decode_signature(data: bytes) -> Signature:
    tag, fields = split_fields(data)
    if tag != SIGNATURE_TAG or len(fields) != 3:
        raise ValueError("Not a signature encoding")
    return Signature(signer=fields[0].decode("utf-8"), digest_of=fields[1], blob=fields[2])


def confirm_rotation(
    grant: AuthorityChangeGrant,
    *,
    new: ServerId,
    keypair: KeyPair,
    backend: SecurityBackend,
    db_key: PublicKeyId,
) -> Tuple[AuthorityChangeConfirm, SymmetricKey]:
    """Open message 2 as the incoming authority and answer with message 3.

    Raises:
        ProtocolError: the grant is not for us or not signed by the DB
    """
    try:
        tag, outer = split_fields(backend.open_for(grant.box, keypair.private, actor=new))
        if tag != 0xB6 or len(outer) != 2:
            raise ValueError("bad grant layout")
        body, signature = outer[0], _decode_signature(outer[1])
        body_tag, fields = split_fields(body)
    except (UnsealError, ValueError) as e:
        raise ProtocolError(f"Unreadable authority change grant: {e}") from None
    if body_tag != 0xB2 or len(fields) != 3:
        raise ProtocolError("Malformed authority change grant")
    if not backend.verify(body, signature, db_key):
        raise ProtocolError("Authority change grant is not signed by the DB")
    subtree_key, granted_to = fields[0], fields[1].decode("utf-8")
    if granted_to != new:
        raise ProtocolError(f"Grant names {granted_to}, not {new}")
    n_db = Nonce(int.from_bytes(fields[2], "big"))
    confirm = AuthorityChangeConfirm(authority=new, box=backend.seal(AuthorityChangeConfirm.sealed_part(n_db.succ()), subtree_key))
    return confirm, subtree_key


def accept_notice(notice: AuthorityChangeNotice, backend: SecurityBackend, db_key: PublicKeyId) -> bool:
    """Leaves act on an authority change only if the DB signed it."""
    return backend.verify(notice.signed_part(), notice.signature, db_key)


def make_handover(
    old: ServerId, successor: ServerId, directory: AuthorityDirectory, backend: SecurityBackend, keypair: KeyPair
) -> DirectoryHandover:
    entries = directory.entries()
    unsigned = DirectoryHandover(old, successor, entries, Signature(signer="", digest_of=b""))
    signature = backend.sign(unsigned.signed_part(), keypair.private, actor=old)
    return DirectoryHandover(old, successor, entries, signature)


def check_handover(handover: DirectoryHandover, backend: SecurityBackend, old_key: Optional[PublicKeyId]) -> List[DirectoryEntry]:
    if old_key is None or not backend.verify(handover.signed_part(), handover.signature, old_key):
        raise ProtocolError(f"Directory handover claiming {handover.authority} is not signed by it")
    return [tuple(e) for e in handover.entries]  # type: ignore[misc]


@dataclass
class RotationRun:
    outcome: RotationOutcome
    subtree_key: Optional[SymmetricKey]
    notice: Optional[AuthorityChangeNotice]
    leaves: Tuple[ServerId, ...]


def rotate_authority_key(
    old: ServerId,
    new: ServerId,
    db: DbServer,
    *,
    old_key: SymmetricKey,
    new_keypair: KeyPair,
    backend: SecurityBackend,
    fresh_nonce: Callable[[ServerId], Nonce],
) -> RotationRun:
    """All three authority change messages back to back, without a network.

    fresh_nonce draws a nonce for the named party (old authority or DB).
    Returns the new subtree key and the notice for every leaf that moved.
    """
    request = begin_rotation(old, new, old_key, backend, fresh_nonce(old))

    def public_key_of(node: ServerId) -> Optional[PublicKeyId]:
        return new_keypair.public if node == new else None

    grant = db.handle_change_request(request, public_key_of, lambda: fresh_nonce(db.name))
    confirm, key = confirm_rotation(grant, new=new, keypair=new_keypair, backend=backend, db_key=db.public_key)
    outcome = db.handle_change_confirm(confirm)
    if not outcome.committed:
        return RotationRun(outcome, None, None, ())
    return RotationRun(outcome, key, outcome.notice, outcome.moved)
