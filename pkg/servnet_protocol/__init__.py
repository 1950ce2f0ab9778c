"""
Servnet protocols

Registration, contract (messages 1 to 11), feedback, revocation and
authority change, plus the directory and DB server they operate on.
Transition functions are pure where the protocol allows it; the DB
server and directories are the only mutable state.
"""

from servnet_protocol.types import (
    DB_SERVER_ID,
    FeedbackError,
    NodeRole,
    ProtocolError,
    RegistrationError,
    ServerId,
    TradeParams,
)
from servnet_protocol.messages import MESSAGE_TYPES, ProtocolMessage
from servnet_protocol.directory import AuthorityDirectory
from servnet_protocol.database import DbAccessError, DbClient, DbRecord, DbServer, RotationOutcome
from servnet_protocol.contract import (
    AbortReason,
    ContractContext,
    ContractSession,
    Envelope,
    NonceCache,
    SendHash,
    SessionRole,
    SessionState,
    StartContract,
    Timeout,
    TranscriptVerdict,
    contract_advance,
    new_session,
    transcript_digest,
    verify_transcript,
)
from servnet_protocol.feedback import (
    FeedbackInbox,
    FeedbackOutcome,
    FeedbackPath,
    FeedbackSlot,
    FeedbackStatus,
    forward_feedback,
    make_feedback,
    process_feedback,
    validate_feedback,
)
from servnet_protocol.registration import RegistrationResult, registration_round
from servnet_protocol.authority import (
    ElectionDecision,
    ElectionResult,
    elect_authority,
    rotate_authority_key,
)
from servnet_protocol.revocation import ShareRecord, revoke_server

__version__ = "0.1.0"
__all__ = [
    "DB_SERVER_ID",
    "FeedbackError",
    "NodeRole",
    "ProtocolError",
    "RegistrationError",
    "ServerId",
    "TradeParams",
    "MESSAGE_TYPES",
    "ProtocolMessage",
    "AuthorityDirectory",
    "DbAccessError",
    "DbClient",
    "DbRecord",
    "DbServer",
    "RotationOutcome",
    "AbortReason",
    "ContractContext",
    "ContractSession",
    "Envelope",
    "NonceCache",
    "SendHash",
    "SessionRole",
    "SessionState",
    "StartContract",
    "Timeout",
    "TranscriptVerdict",
    "contract_advance",
    "new_session",
    "transcript_digest",
    "verify_transcript",
    "FeedbackInbox",
    "FeedbackOutcome",
    "FeedbackPath",
    "FeedbackSlot",
    "FeedbackStatus",
    "forward_feedback",
    "make_feedback",
    "process_feedback",
    "validate_feedback",
    "RegistrationResult",
    "registration_round",
    "ElectionDecision",
    "ElectionResult",
    "elect_authority",
    "rotate_authority_key",
    "ShareRecord",
    "revoke_server",
]
