"""
Protocol message catalog.

Every message is a frozen dataclass with a one-byte TAG and a fixed field
order (the dataclass declaration order). encode() gives the canonical
bytes; the contract transcript and all signatures are computed over
those bytes, never over Python object identity.

Signed parts use their own tags (0x8x/0x9x/0xAx/0xBx) so a signature over
one kind of statement can never be passed off as another.

Tag map:
  0x01-0x03  registration (intro, ack, flood)
  0x11-0x18  contract, messages 1 to 11
  0x21-0x22  feedback and its delivery wrapper
  0x31-0x35  authority change and directory handover
  0x41       revocation notice
"""

import dataclasses
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, ClassVar, Dict, Tuple

from message_security import (
    Nonce,
    PublicKeyId,
    SealedBox,
    Signature,
    TransactionId,
    canonical,
    digest,
    short_hex,
)
from reputation_core import LocalScore

from servnet_protocol.types import ServerId


class ProtocolMessage:
    TAG: ClassVar[int] = 0
    KIND: ClassVar[str] = "message"

    def fields(self) -> Tuple[Any, ...]:
        return tuple(getattr(self, f.name) for f in dataclasses.fields(self))  # type: ignore[arg-type]

    def encode(self) -> bytes:
        return canonical(self.TAG, *self.fields())

    def fingerprint(self) -> str:
        return short_hex(digest(self.encode()))

    def field_names(self) -> Tuple[str, ...]:
        return tuple(f.name for f in dataclasses.fields(self))  # type: ignore[arg-type]


# -- registration -----------------------------------------------------------


@dataclass(frozen=True)
class RegistrationIntro(ProtocolMessage):
    """A, PK_A, {A, PK_A, N_A}_SignA"""

    TAG: ClassVar[int] = 0x01
    KIND: ClassVar[str] = "registration_intro"

    node: ServerId
    public_key: PublicKeyId
    nonce: Nonce
    signature: Signature

    @staticmethod
    def signed_part(node: ServerId, public_key: PublicKeyId, nonce: Nonce) -> bytes:
        return canonical(0x81, node, public_key, nonce)


@dataclass(frozen=True)
class RegistrationAck(ProtocolMessage):
    """{N_A + 1}_{PK_A}"""

    TAG: ClassVar[int] = 0x02
    KIND: ClassVar[str] = "registration_ack"

    authority: ServerId
    box: SealedBox


@dataclass(frozen=True)
class RegistrationFlood(ProtocolMessage):
    TAG: ClassVar[int] = 0x03
    KIND: ClassVar[str] = "registration_flood"

    authority: ServerId
    intro: RegistrationIntro
    signature: Signature

    @staticmethod
    def signed_part(authority: ServerId, intro: RegistrationIntro) -> bytes:
        return canonical(0x83, authority, intro)


# -- contract ---------------------------------------------------------------


@dataclass(frozen=True)
class ContractRequest(ProtocolMessage):
    """Message 1: A, SS_A, D_A, B, N_A"""

    TAG: ClassVar[int] = 0x11
    KIND: ClassVar[str] = "contract_request"

    initiator: ServerId
    share_size: int
    duration: int
    responder: ServerId
    nonce: Nonce


@dataclass(frozen=True)
class ReputationQuery(ProtocolMessage):
    """Messages 2 and 6: requester asks its authority about subject."""

    TAG: ClassVar[int] = 0x12
    KIND: ClassVar[str] = "reputation_query"

    requester: ServerId
    subject: ServerId
    nonce: Nonce


@dataclass(frozen=True)
class ReputationRelay(ProtocolMessage):
    """Messages 3 and 7: {requester, subject, N_Auth}_SignAuth to subject's authority."""

    TAG: ClassVar[int] = 0x13
    KIND: ClassVar[str] = "reputation_relay"

    authority: ServerId
    requester: ServerId
    subject: ServerId
    query_nonce: Nonce
    relay_nonce: Nonce
    signature: Signature

    def signed_part(self) -> bytes:
        return canonical(0x93, self.requester, self.subject, self.query_nonce, self.relay_nonce)


@dataclass(frozen=True)
class ReputationAttestation(ProtocolMessage):
    """Messages 4 and 8: {subject, GR, PK_subject}_SignAuth, answered straight to the requester."""

    TAG: ClassVar[int] = 0x14
    KIND: ClassVar[str] = "reputation_attestation"

    authority: ServerId
    subject: ServerId
    reputation: Fraction
    transactions: int
    subject_key: PublicKeyId
    query_nonce: Nonce
    refused: bool
    signature: Signature

    def signed_part(self) -> bytes:
        return canonical(
            0x94,
            self.authority,
            self.subject,
            self.reputation,
            self.transactions,
            self.subject_key,
            self.query_nonce,
            self.refused,
        )

    @staticmethod
    def unsigned(
        authority: ServerId,
        subject: ServerId,
        reputation: Fraction,
        transactions: int,
        subject_key: PublicKeyId,
        query_nonce: Nonce,
        refused: bool = False,
    ) -> "ReputationAttestation":
        return ReputationAttestation(
            authority=authority,
            subject=subject,
            reputation=Fraction(reputation),
            transactions=transactions,
            subject_key=subject_key,
            query_nonce=query_nonce,
            refused=refused,
            signature=Signature(signer="", digest_of=b""),
        )


@dataclass(frozen=True)
class ContractReject(ProtocolMessage):
    """Messages 5a and 9a: "Reject", N + 1"""

    TAG: ClassVar[int] = 0x15
    KIND: ClassVar[str] = "contract_reject"

    sender: ServerId
    verdict: str
    nonce: Nonce


@dataclass(frozen=True)
class ContractCounter(ProtocolMessage):
    """Message 5b: B, SS_B, D_B, A, N_B"""

    TAG: ClassVar[int] = 0x16
    KIND: ClassVar[str] = "contract_counter"

    responder: ServerId
    share_size: int
    duration: int
    initiator: ServerId
    nonce: Nonce


@dataclass(frozen=True)
class ContractAck(ProtocolMessage):
    """Message 9b: "Ack", N_B + 1"""

    TAG: ClassVar[int] = 0x17
    KIND: ClassVar[str] = "contract_ack"

    initiator: ServerId
    verdict: str
    nonce: Nonce


@dataclass(frozen=True)
class TranscriptHash(ProtocolMessage):
    """Messages 10 and 11: {Hash(transcript)}_Sign"""

    TAG: ClassVar[int] = 0x18
    KIND: ClassVar[str] = "transcript_hash"

    sender: ServerId
    step: int
    transcript_hash: bytes
    signature: Signature


# -- feedback ---------------------------------------------------------------


@dataclass(frozen=True)
class FeedbackMessage(ProtocolMessage):
    """{N_A N_B, LS, scorer}_SignScorer"""

    TAG: ClassVar[int] = 0x21
    KIND: ClassVar[str] = "feedback"

    sender: ServerId
    txn_id: TransactionId
    score: LocalScore
    scorer: ServerId
    signature: Signature

    @staticmethod
    def body(txn_id: TransactionId, score: LocalScore, scorer: ServerId) -> bytes:
        return canonical(0xA1, txn_id, score, scorer)

    def signed_part(self) -> bytes:
        return self.body(self.txn_id, self.score, self.scorer)


@dataclass(frozen=True)
class FeedbackCopy(ProtocolMessage):
    """Routing wrapper; path is "to-target", "forwarded" or "direct". Only the inner message is signed."""

    TAG: ClassVar[int] = 0x22
    KIND: ClassVar[str] = "feedback_copy"

    path: str
    target: ServerId
    feedback: FeedbackMessage


# -- authority change -------------------------------------------------------


@dataclass(frozen=True)
class AuthorityChangeRequest(ProtocolMessage):
    """Message 1: {Auth_New, Auth_Old, N}_{K_DBA}"""

    TAG: ClassVar[int] = 0x31
    KIND: ClassVar[str] = "authority_change_request"

    authority: ServerId
    box: SealedBox

    @staticmethod
    def sealed_part(new: ServerId, old: ServerId, nonce: Nonce) -> bytes:
        return canonical(0xB1, new, old, nonce)


@dataclass(frozen=True)
class AuthorityChangeNotice(ProtocolMessage):
    """(Auth_New, Auth_Old, N_DB)_SignDB, plus the new authority's public key."""

    TAG: ClassVar[int] = 0x34
    KIND: ClassVar[str] = "authority_change_notice"

    db: ServerId
    new_authority: ServerId
    old_authority: ServerId
    new_authority_key: PublicKeyId
    nonce: Nonce
    signature: Signature

    def signed_part(self) -> bytes:
        return self.body(self.new_authority, self.old_authority, self.new_authority_key, self.nonce)

    @staticmethod
    def body(new: ServerId, old: ServerId, new_key: PublicKeyId, nonce: Nonce) -> bytes:
        return canonical(0xB4, new, old, new_key, nonce)


@dataclass(frozen=True)
class AuthorityChangeGrant(ProtocolMessage):
    """Message 2: {K_New, Auth_New, N_DB}_{PK_New} with the DB's signature inside, plus the notice."""

    TAG: ClassVar[int] = 0x32
    KIND: ClassVar[str] = "authority_change_grant"

    db: ServerId
    box: SealedBox
    notice: AuthorityChangeNotice

    @staticmethod
    def grant_body(key: bytes, new: ServerId, nonce: Nonce) -> bytes:
        return canonical(0xB2, key, new, nonce)


@dataclass(frozen=True)
class AuthorityChangeConfirm(ProtocolMessage):
    """Message 3: {N_DB + 1}_{K_New}"""

    TAG: ClassVar[int] = 0x33
    KIND: ClassVar[str] = "authority_change_confirm"

    authority: ServerId
    box: SealedBox

    @staticmethod
    def sealed_part(nonce: Nonce) -> bytes:
        return canonical(0xB3, nonce)


@dataclass(frozen=True)
class DirectoryHandover(ProtocolMessage):
    """The outgoing authority's directory, flattened to (node, authority, public key) triples."""

    TAG: ClassVar[int] = 0x35
    KIND: ClassVar[str] = "directory_handover"

    authority: ServerId
    successor: ServerId
    entries: Tuple[Tuple[str, str, str], ...]
    signature: Signature

    def signed_part(self) -> bytes:
        return canonical(0xB5, self.authority, self.successor, self.entries)


# -- revocation -------------------------------------------------------------


@dataclass(frozen=True)
class RevocationNotice(ProtocolMessage):
    TAG: ClassVar[int] = 0x41
    KIND: ClassVar[str] = "revocation_notice"

    authority: ServerId
    leaving: ServerId
    nonce: Nonce
    signature: Signature

    @staticmethod
    def body(authority: ServerId, leaving: ServerId, nonce: Nonce) -> bytes:
        return canonical(0xC1, authority, leaving, nonce)

    def signed_part(self) -> bytes:
        return self.body(self.authority, self.leaving, self.nonce)


MESSAGE_TYPES: Dict[str, type] = {
    cls.KIND: cls
    for cls in (
        RegistrationIntro,
        RegistrationAck,
        RegistrationFlood,
        ContractRequest,
        ReputationQuery,
        ReputationRelay,
        ReputationAttestation,
        ContractReject,
        ContractCounter,
        ContractAck,
        TranscriptHash,
        FeedbackMessage,
        FeedbackCopy,
        AuthorityChangeRequest,
        AuthorityChangeNotice,
        AuthorityChangeGrant,
        AuthorityChangeConfirm,
        DirectoryHandover,
        RevocationNotice,
    )
}
