"""
Value types of the security vocabulary shared by both backends.
"""

import hashlib
from dataclasses import dataclass

PublicKeyId = str
PrivateKeyHandle = str
SymmetricKey = bytes
Hash = bytes

NONCE_BITS = 128
NONCE_BYTES = NONCE_BITS // 8


class SecurityError(Exception):
    """Base class for security model violations."""


class KeyNotHeldError(SecurityError):
    """A node tried to use a private key it does not hold."""

    def __init__(self, actor: str, handle: str):
        super().__init__(f"key not held: {actor} does not hold {handle}")
        self.actor = actor
        self.handle = handle


class UnsealError(SecurityError):
    """A sealed box was opened with a key that did not seal it."""

    def __init__(self, detail: str = ""):
        super().__init__(f"unsealing failed{': ' + detail if detail else ''}")


def digest(message: bytes) -> Hash:
    return hashlib.sha256(message).digest()


def short_hex(data: bytes, length: int = 16) -> str:
    return data.hex()[:length]


@dataclass(frozen=True)
class KeyPair:
    public: PublicKeyId
    private: PrivateKeyHandle
    owner: str


@dataclass(frozen=True)
class Signature:
    """signer's public id bound to the digest of the signed bytes.

    blob carries the raw signature for the cryptography backend and is
    empty under the model backend, where the backend's own record of
    issued signatures is what makes it unforgeable.
    """

    signer: PublicKeyId
    digest_of: Hash
    blob: bytes = b""


@dataclass(frozen=True)
class SealedBox:
    """key_id names the key without revealing it (fingerprint or public id)."""

    key_id: str
    payload: bytes


@dataclass(frozen=True, order=True)
class Nonce:
    value: int

    def __post_init__(self):
        if self.value < 0:
            raise ValueError(f"Nonce must be non-negative, got {self.value}")

    def succ(self) -> "Nonce":
        """The N+1 acknowledgment value."""
        return Nonce(self.value + 1)

    def to_bytes(self) -> bytes:
        length = max(NONCE_BYTES, (self.value.bit_length() + 7) // 8)
        return self.value.to_bytes(length, "big")

    def __str__(self) -> str:
        return f"{self.value:032x}"


@dataclass(frozen=True)
class TransactionId:
    """N_A N_B: the initiator's and the responder's nonces."""

    initiator_nonce: Nonce
    responder_nonce: Nonce

    def to_bytes(self) -> bytes:
        return self.initiator_nonce.to_bytes() + self.responder_nonce.to_bytes()

    def __str__(self) -> str:
        return f"{self.initiator_nonce}{self.responder_nonce}"

    @classmethod
    def parse(cls, text: str) -> "TransactionId":
        if len(text) != 64:
            raise ValueError(f"Transaction id must be 64 hex digits, got {text!r}")
        return cls(Nonce(int(text[:32], 16)), Nonce(int(text[32:], 16)))
