"""
Message security model

Signatures, symmetric and public-key sealing, digests and nonces behind
one backend interface. The model backend enforces unforgeability through
its key-possession registry; the crypto backend runs the same calls on
Ed25519 / X25519 / AES-GCM.
"""

from message_security.backend import ModelBackend, SecurityBackend, key_fingerprint, make_backend
from message_security.encoding import canonical, encode_field, split_fields
from message_security.nonces import NoncePool, NonceSource
from message_security.primitives import (
    Hash,
    KeyNotHeldError,
    KeyPair,
    Nonce,
    PrivateKeyHandle,
    PublicKeyId,
    SealedBox,
    SecurityError,
    Signature,
    SymmetricKey,
    TransactionId,
    UnsealError,
    digest,
    short_hex,
)

__all__ = [
    "ModelBackend",
    "SecurityBackend",
    "key_fingerprint",
    "make_backend",
    "canonical",
    "encode_field",
    "split_fields",
    "NoncePool",
    "NonceSource",
    "Hash",
    "KeyNotHeldError",
    "KeyPair",
    "Nonce",
    "PrivateKeyHandle",
    "PublicKeyId",
    "SealedBox",
    "SecurityError",
    "Signature",
    "SymmetricKey",
    "TransactionId",
    "UnsealError",
    "digest",
    "short_hex",
]
