"""
Identifiers, trade parameters and protocol errors.
"""

from dataclasses import dataclass
from enum import Enum

ServerId = str

DB_SERVER_ID = "DB"


class NodeRole(str, Enum):
    AUTHORITY = "authority"
    LEAF = "leaf"


class ProtocolError(Exception):
    """An operation was refused locally before anything was sent."""


class RegistrationError(ProtocolError):
    pass


class FeedbackError(ProtocolError):
    pass


@dataclass(frozen=True)
class TradeParams:
    """SS_X and D_X: share size in bytes, storage duration in ticks."""

    share_size: int
    duration: int

    def __post_init__(self):
        if self.share_size <= 0:
            raise ValueError(f"Share size must be positive, got {self.share_size}")
        if self.duration <= 0:
            raise ValueError(f"Duration must be positive, got {self.duration}")
