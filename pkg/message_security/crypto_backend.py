"""
Security backend on real primitives.

Ed25519 signs the SHA-256 digest of a message; symmetric sealing is
AES-256-GCM; sealing to a public key is X25519 + HKDF-SHA256 + AES-GCM.
All nonces and ephemeral keys are derived from the inputs so runs stay
reproducible under a fixed scenario seed.
"""

import hashlib
from typing import Dict

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from message_security.backend import SecurityBackend, key_fingerprint
from message_security.encoding import encode_int
from message_security.primitives import (
    KeyPair,
    PrivateKeyHandle,
    PublicKeyId,
    SealedBox,
    Signature,
    SymmetricKey,
    UnsealError,
    digest,
)

_RAW = serialization.Encoding.Raw
_RAW_PUB = serialization.PublicFormat.Raw


def _derived_nonce(*parts: bytes) -> bytes:
    return hashlib.sha256(b"servnet-gcm" + b"".join(parts)).digest()[:12]


def _box_key(shared: bytes) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=32, salt=None, info=b"servnet seal").derive(shared)


class CryptoBackend(SecurityBackend):
    name = "crypto"

    def __init__(self, seed: int = 0):
        super().__init__(seed)
        self._signing: Dict[PrivateKeyHandle, Ed25519PrivateKey] = {}
        self._boxing: Dict[PrivateKeyHandle, X25519PrivateKey] = {}
        self._verify_keys: Dict[PublicKeyId, Ed25519PublicKey] = {}
        self._box_public: Dict[PublicKeyId, X25519PublicKey] = {}

    def _make_pair(self, material: bytes, owner: str) -> KeyPair:
        signing = Ed25519PrivateKey.from_private_bytes(hashlib.sha256(b"sig" + material).digest())
        boxing = X25519PrivateKey.from_private_bytes(hashlib.sha256(b"box" + material).digest())
        public = signing.public_key().public_bytes(_RAW, _RAW_PUB).hex()
        handle = "sk-" + hashlib.sha256(b"handle" + material).hexdigest()[:24]
        self._signing[handle] = signing
        self._boxing[handle] = boxing
        self._verify_keys[public] = signing.public_key()
        self._box_public[public] = boxing.public_key()
        return KeyPair(public=public, private=handle, owner=owner)

    def _sign(self, message: bytes, key: PrivateKeyHandle) -> Signature:
        hashed = digest(message)
        blob = self._signing[key].sign(hashed)
        return Signature(signer=self._public_of[key], digest_of=hashed, blob=blob)

    def verify(self, message: bytes, sig: Signature, key: PublicKeyId) -> bool:
        hashed = digest(message)
        if sig.signer != key or sig.digest_of != hashed:
            return False
        public = self._verify_keys.get(key)
        if public is None:
            return False
        try:
            public.verify(sig.blob, hashed)
        except InvalidSignature:
            return False
        return True

    def seal(self, message: bytes, key: SymmetricKey) -> SealedBox:
        nonce = _derived_nonce(key, message)
        ciphertext = AESGCM(key).encrypt(nonce, message, None)
        return SealedBox(key_id=key_fingerprint(key), payload=nonce + ciphertext)

    def open(self, box: SealedBox, key: SymmetricKey) -> bytes:
        if box.key_id != key_fingerprint(key):
            raise UnsealError("wrong key")
        try:
            return AESGCM(key).decrypt(box.payload[:12], box.payload[12:], None)
        except InvalidTag:
            raise UnsealError("authentication tag mismatch") from None

    def seal_for(self, message: bytes, recipient: PublicKeyId) -> SealedBox:
        public = self._box_public.get(recipient)
        if public is None:
            raise ValueError(f"Unknown public key {recipient}")
        eph = X25519PrivateKey.from_private_bytes(
            hashlib.sha256(b"eph" + encode_int(self.seed) + recipient.encode("utf-8") + message).digest()
        )
        key = _box_key(eph.exchange(public))
        nonce = _derived_nonce(key, message)
        ciphertext = AESGCM(key).encrypt(nonce, message, None)
        eph_public = eph.public_key().public_bytes(_RAW, _RAW_PUB)
        return SealedBox(key_id=recipient, payload=eph_public + nonce + ciphertext)

    def _open_for(self, box: SealedBox, key: PrivateKeyHandle) -> bytes:
        eph_public = X25519PublicKey.from_public_bytes(box.payload[:32])
        shared_key = _box_key(self._boxing[key].exchange(eph_public))
        try:
            return AESGCM(shared_key).decrypt(box.payload[32:44], box.payload[44:], None)
        except InvalidTag:
            raise UnsealError("authentication tag mismatch") from None
