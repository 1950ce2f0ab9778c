"""
DB server: the single holder of every server's score ledger.

Records are read and written only through a sealed channel. An authority
seals each request with its current subtree key K_DBA; the DB opens it
with the key it has on record for that authority and answers sealed
under the same key. Nothing else reaches the records. Rotating a subtree
key (msgs 1 to 3 of the authority change) is the DB's half of the
authority change protocol and lives here too.

Usage:
  db = DbServer(backend, keypair)
  key = db.issue_subtree_key("A1")
  client = DbClient(db, backend, "A1", key)
  client.create("S3", public_key)
  record = client.read("S3")
"""

import logging
import threading
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Tuple

from message_security import (
    KeyPair,
    Nonce,
    PublicKeyId,
    SealedBox,
    SecurityBackend,
    SymmetricKey,
    UnsealError,
    canonical,
    split_fields,
)
from message_security.encoding import decode_int
from reputation_core import GlobalReputation, ScoreLedger, new_ledger, reset_ledger

from servnet_protocol.messages import (
    AuthorityChangeConfirm,
    AuthorityChangeGrant,
    AuthorityChangeNotice,
    AuthorityChangeRequest,
)
from servnet_protocol.types import DB_SERVER_ID, ProtocolError, ServerId

logger = logging.getLogger("servnet.db")

_REQUEST_TAG = 0xD0
_RECORD_TAG = 0xD8
_LIST_TAG = 0xD9
_OK_TAG = 0xDA

OPERATIONS = ("read", "write", "create", "subtree", "revoke", "retire")


class DbAccessError(ProtocolError):
    """The request opened fine but the authority may not touch that record."""


@dataclass(frozen=True)
class DbRecord:
    node: ServerId
    ledger: ScoreLedger
    authority: ServerId
    public_key: PublicKeyId
    active: bool = True

    @property
    def reputation(self) -> GlobalReputation:
        return self.ledger.reputation

    def encode(self) -> bytes:
        return canonical(
            _RECORD_TAG,
            self.node,
            self.ledger.transactions,
            self.ledger.pos_accum,
            self.ledger.neg_accum,
            self.authority,
            self.public_key,
            self.active,
        )

    @classmethod
    def decode(cls, data: bytes) -> "DbRecord":
        tag, fields = split_fields(data)
        if tag != _RECORD_TAG or len(fields) != 7:
            raise ValueError("Not a DB record encoding")
        node = fields[0].decode("utf-8")
        ledger = ScoreLedger(
            owner=node,
            transactions=decode_int(fields[1]),
            pos_accum=Fraction(fields[2].decode("utf-8")),
            neg_accum=Fraction(fields[3].decode("utf-8")),
        )
        return cls(
            node=node,
            ledger=ledger,
            authority=fields[4].decode("utf-8"),
            public_key=fields[5].decode("utf-8"),
            active=fields[6] == b"\x01",
        )


@dataclass
class PendingRotation:
    old: ServerId
    new: ServerId
    key: SymmetricKey
    nonce: Nonce
    notice: AuthorityChangeNotice


@dataclass(frozen=True)
class RotationOutcome:
    committed: bool
    old: ServerId
    new: ServerId
    nonce: Nonce
    moved: Tuple[ServerId, ...] = ()
    notice: Optional[AuthorityChangeNotice] = None
    detail: str = ""


@dataclass
class AccessLogEntry:
    actor: ServerId
    operation: str
    ok: bool
    detail: str = ""


class DbServer:
    """Record store plus subtree keys. One instance per simulation."""

    def __init__(self, backend: SecurityBackend, keypair: KeyPair, name: ServerId = DB_SERVER_ID):
        self.backend = backend
        self.keypair = keypair
        self.name = name
        self._records: Dict[ServerId, DbRecord] = {}
        self._subtree_keys: Dict[ServerId, SymmetricKey] = {}
        self._pending: Dict[ServerId, PendingRotation] = {}
        self.access_log: List[AccessLogEntry] = []
        self.lock = threading.Lock()

    @property
    def public_key(self) -> PublicKeyId:
        return self.keypair.public

    # -- setup and trusted reads -------------------------------------------

    def issue_subtree_key(self, authority: ServerId) -> SymmetricKey:
        """K_DBA for an authority installed at setup (no rotation involved)."""
        key = self.backend.new_symmetric_key(f"subtree:{authority}")
        self._subtree_keys[authority] = key
        logger.debug(f"subtree key issued for {authority}")
        return key

    def has_subtree_key(self, authority: ServerId) -> bool:
        return authority in self._subtree_keys

    def seed_record(self, record: DbRecord) -> None:
        """Install a record directly; scenario setup only."""
        self._records[record.node] = record

    def record(self, node: ServerId) -> Optional[DbRecord]:
        return self._records.get(node)

    def records(self) -> List[DbRecord]:
        return [self._records[n] for n in sorted(self._records)]

    def pending_rotation(self, new: ServerId) -> Optional[PendingRotation]:
        return self._pending.get(new)

    # -- sealed access ------------------------------------------------------

    def access(self, actor: ServerId, request: SealedBox) -> SealedBox:
        """Serve one sealed request from an authority.

        Raises:
            UnsealError: actor has no key on record or sealed with a stale key
            DbAccessError: the record is outside the actor's subtree
        """
        key = self._subtree_keys.get(actor)
        if key is None:
            self.access_log.append(AccessLogEntry(actor, "?", False, "no subtree key"))
            raise UnsealError(f"no subtree key on record for {actor}")
        try:
            plaintext = self.backend.open(request, key)
        except UnsealError as e:
            self.access_log.append(AccessLogEntry(actor, "?", False, str(e)))
            raise
        tag, fields = split_fields(plaintext)
        if tag != _REQUEST_TAG or len(fields) != 3:
            raise DbAccessError("Malformed DB request")
        op = fields[0].decode("utf-8")
        node = fields[1].decode("utf-8")
        with self.lock:
            try:
                response = self._serve(actor, op, node, fields[2])
            except DbAccessError as e:
                self.access_log.append(AccessLogEntry(actor, op, False, str(e)))
                raise
        self.access_log.append(AccessLogEntry(actor, op, True))
        return self.backend.seal(response, key)

    def _owned(self, actor: ServerId, node: ServerId) -> DbRecord:
        record = self._records.get(node)
        if record is None or not record.active:
            raise DbAccessError(f"Record {node} not found")
        if record.authority != actor:
            raise DbAccessError(f"Record {node} is not in {actor}'s subtree")
        return record

    def _serve(self, actor: ServerId, op: str, node: ServerId, payload: bytes) -> bytes:
        if op == "read":
            return self._owned(actor, node).encode()
        if op == "write":
            current = self._owned(actor, node)
            incoming = DbRecord.decode(payload)
            # Only the ledger is writable; ownership changes go through rotation.
            self._records[node] = replace(current, ledger=replace(incoming.ledger, owner=node))
            return self._records[node].encode()
        if op == "create":
            existing = self._records.get(node)
            if existing is not None and existing.active:
                raise DbAccessError(f"Record {node} already exists")
            record = DbRecord(node, new_ledger(node), actor, payload.decode("utf-8"))
            self._records[node] = record
            return record.encode()
        if op == "subtree":
            owned = [r for r in self.records() if r.active and r.authority == actor]
            return canonical(_LIST_TAG, *owned)
        if op == "revoke":
            current = self._owned(actor, node)
            self._records[node] = replace(current, ledger=reset_ledger(current.ledger), authority="", active=False)
            return self._records[node].encode()
        if op == "retire":
            del self._subtree_keys[actor]
            logger.info(f"{actor} retired its subtree key")
            return canonical(_OK_TAG, actor)
        raise DbAccessError(f"Unknown DB operation {op}")

    # -- key rotation --------------------------------------------------------

    def handle_change_request(
        self,
        request: AuthorityChangeRequest,
        public_key_of: Callable[[ServerId], Optional[PublicKeyId]],
        fresh_nonce: Callable[[], Nonce],
    ) -> AuthorityChangeGrant:
        """Open msg 1 with the old authority's key and answer with msg 2.

        Raises:
            UnsealError: not sealed under the claimed authority's current key
            ProtocolError: malformed request or unknown new authority
        """
        key = self._subtree_keys.get(request.authority)
        if key is None:
            raise UnsealError(f"no subtree key on record for {request.authority}")
        tag, fields = split_fields(self.backend.open(request.box, key))
        if tag != 0xB1 or len(fields) != 3:
            raise ProtocolError("Malformed authority change request")
        new, old = fields[0].decode("utf-8"), fields[1].decode("utf-8")
        if old != request.authority:
            raise ProtocolError(f"Change request names {old} but came from {request.authority}")
        new_key_id = public_key_of(new)
        if new_key_id is None:
            raise ProtocolError(f"Unknown new authority {new}")
        new_record = self._records.get(new)
        if new_record is None or not new_record.active or new_record.authority != old:
            raise ProtocolError(f"{new} is not a leaf of {old}'s subtree")

        subtree_key = self.backend.new_symmetric_key(f"subtree:{new}")
        n_db = fresh_nonce()
        body = AuthorityChangeGrant.grant_body(subtree_key, new, n_db)
        body_sig = self.backend.sign(body, self.keypair.private, actor=self.name)
        box = self.backend.seal_for(canonical(0xB6, body, body_sig), new_key_id)
        notice_body = AuthorityChangeNotice.body(new, old, new_key_id, n_db)
        notice = AuthorityChangeNotice(
            db=self.name,
            new_authority=new,
            old_authority=old,
            new_authority_key=new_key_id,
            nonce=n_db,
            signature=self.backend.sign(notice_body, self.keypair.private, actor=self.name),
        )
        self._pending[new] = PendingRotation(old=old, new=new, key=subtree_key, nonce=n_db, notice=notice)
        logger.info(f"rotation {old} -> {new} pending, N_DB={n_db}")
        return AuthorityChangeGrant(db=self.name, box=box, notice=notice)

    def handle_change_confirm(self, confirm: AuthorityChangeConfirm) -> RotationOutcome:
        """Check msg 3 and commit, or roll back on a wrong nonce.

        On commit the old key is revoked, the new key installed and every
        record of the old subtree reassigned to the new authority.

        Raises:
            ProtocolError: no rotation pending for the sender
        """
        pending = self._pending.pop(confirm.authority, None)
        if pending is None:
            raise ProtocolError(f"No rotation pending for {confirm.authority}")
        try:
            plaintext = self.backend.open(confirm.box, pending.key)
            tag, fields = split_fields(plaintext)
            ok = tag == 0xB3 and len(fields) == 1 and int.from_bytes(fields[0], "big") == pending.nonce.succ().value
        except (UnsealError, ValueError):
            ok = False
        if not ok:
            logger.warning(f"rotation {pending.old} -> {pending.new} rolled back: bad confirmation")
            return RotationOutcome(False, pending.old, pending.new, pending.nonce, detail="confirmation nonce mismatch")

        with self.lock:
            self._subtree_keys.pop(pending.old, None)
            self._subtree_keys[pending.new] = pending.key
            moved = []
            for node in sorted(self._records):
                record = self._records[node]
                if record.active and record.authority == pending.old:
                    self._records[node] = replace(record, authority=pending.new)
                    moved.append(node)
        logger.info(f"rotation {pending.old} -> {pending.new} committed, {len(moved)} records moved")
        return RotationOutcome(True, pending.old, pending.new, pending.nonce, tuple(moved), pending.notice)


@dataclass
class DbClient:
    """An authority's end of the sealed DB channel."""

    db: DbServer
    backend: SecurityBackend
    actor: ServerId
    key: SymmetricKey
    operations: List[str] = field(default_factory=list)

    def _call(self, op: str, node: ServerId = "", payload: bytes = b"") -> bytes:
        request = self.backend.seal(canonical(_REQUEST_TAG, op, node, payload), self.key)
        response = self.db.access(self.actor, request)
        self.operations.append(op)
        return self.backend.open(response, self.key)

    def read(self, node: ServerId) -> DbRecord:
        return DbRecord.decode(self._call("read", node))

    def write(self, node: ServerId, ledger: ScoreLedger) -> DbRecord:
        placeholder = DbRecord(node, ledger, self.actor, "")
        return DbRecord.decode(self._call("write", node, placeholder.encode()))

    def create(self, node: ServerId, public_key: PublicKeyId) -> DbRecord:
        return DbRecord.decode(self._call("create", node, public_key.encode("utf-8")))

    def subtree(self) -> List[DbRecord]:
        tag, fields = split_fields(self._call("subtree"))
        if tag != _LIST_TAG:
            raise ValueError("Not a DB record list")
        return [DbRecord.decode(f) for f in fields]

    def revoke(self, node: ServerId) -> DbRecord:
        return DbRecord.decode(self._call("revoke", node))

    def retire(self) -> None:
        self._call("retire")
