"""
Security backends: signatures, sealing and key possession.

Both backends share one interface and one possession registry. A private
key can only be used by a node the registry lists as its holder, which is
how a forgery attempt surfaces: the adversary's sign() call raises
KeyNotHeldError instead of producing a signature.

The model backend needs no cryptography at all. It remembers every
signature it issued, so verify() is true only for signatures that came
out of sign(). The cryptography backend (message_security.crypto_backend)
runs the same protocol over Ed25519 and AES-GCM.
"""

import hashlib
import logging
from abc import ABC, abstractmethod
from typing import Dict, Set, Tuple

from message_security.encoding import encode_int
from message_security.primitives import (
    Hash,
    KeyNotHeldError,
    KeyPair,
    PrivateKeyHandle,
    PublicKeyId,
    SealedBox,
    Signature,
    SymmetricKey,
    UnsealError,
    digest,
)

logger = logging.getLogger("servnet.security")


def key_fingerprint(key: SymmetricKey) -> str:
    return hashlib.sha256(b"servnet-kid" + key).hexdigest()[:16]


def _keystream(key: bytes, length: int) -> bytes:
    out = bytearray()
    counter = 0
    while len(out) < length:
        out += hashlib.sha256(key + counter.to_bytes(8, "big")).digest()
        counter += 1
    return bytes(out[:length])


def _xor(data: bytes, stream: bytes) -> bytes:
    return bytes(a ^ b for a, b in zip(data, stream))


class SecurityBackend(ABC):
    """Shared possession registry and key bookkeeping."""

    name = "abstract"

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._pairs: Dict[int, KeyPair] = {}
        self._holders: Dict[PrivateKeyHandle, Set[str]] = {}
        self._public_of: Dict[PrivateKeyHandle, PublicKeyId] = {}
        self._symmetric_counter = 0

    # -- keys -------------------------------------------------------------

    def keygen(self, seed: int, owner: str) -> KeyPair:
        """Deterministic key pair for a seed; the owner becomes its holder."""
        pair = self._pairs.get(seed)
        if pair is not None:
            if pair.owner != owner:
                raise ValueError(f"Key seed {seed} already belongs to {pair.owner}")
            return pair
        material = hashlib.sha256(b"servnet-key" + encode_int(seed)).digest()
        pair = self._make_pair(material, owner)
        self._pairs[seed] = pair
        self._holders[pair.private] = {owner}
        self._public_of[pair.private] = pair.public
        logger.debug(f"keygen for {owner}: {pair.public}")
        return pair

    @abstractmethod
    def _make_pair(self, material: bytes, owner: str) -> KeyPair:
        ...

    def holds(self, actor: str, handle: PrivateKeyHandle) -> bool:
        return actor in self._holders.get(handle, set())

    def require(self, actor: str, handle: PrivateKeyHandle) -> None:
        if not self.holds(actor, handle):
            raise KeyNotHeldError(actor, handle)

    def public_key_of(self, handle: PrivateKeyHandle) -> PublicKeyId:
        if handle not in self._public_of:
            raise ValueError(f"Unknown private key handle {handle}")
        return self._public_of[handle]

    def new_symmetric_key(self, label: str) -> SymmetricKey:
        """A fresh 256-bit key, deterministic in (backend seed, label, call order)."""
        self._symmetric_counter += 1
        return hashlib.sha256(
            b"servnet-sym" + encode_int(self.seed) + label.encode("utf-8")
            + self._symmetric_counter.to_bytes(8, "big")
        ).digest()

    # -- signatures -------------------------------------------------------

    def sign(self, message: bytes, key: PrivateKeyHandle, actor: str) -> Signature:
        self.require(actor, key)
        return self._sign(message, key)

    @abstractmethod
    def _sign(self, message: bytes, key: PrivateKeyHandle) -> Signature:
        ...

    @abstractmethod
    def verify(self, message: bytes, sig: Signature, key: PublicKeyId) -> bool:
        ...

    # -- sealing ----------------------------------------------------------

    @abstractmethod
    def seal(self, message: bytes, key: SymmetricKey) -> SealedBox:
        ...

    @abstractmethod
    def open(self, box: SealedBox, key: SymmetricKey) -> bytes:
        ...

    @abstractmethod
    def seal_for(self, message: bytes, recipient: PublicKeyId) -> SealedBox:
        """{M}_{PK}: only the holder of the matching private key can open it."""

    def open_for(self, box: SealedBox, key: PrivateKeyHandle, actor: str) -> bytes:
        self.require(actor, key)
        if box.key_id != self.public_key_of(key):
            raise UnsealError("box sealed to a different public key")
        return self._open_for(box, key)

    @abstractmethod
    def _open_for(self, box: SealedBox, key: PrivateKeyHandle) -> bytes:
        ...

    @staticmethod
    def digest(message: bytes) -> Hash:
        return digest(message)


class ModelBackend(SecurityBackend):
    """Registry-enforced unforgeability; fast and fully inspectable."""

    name = "model"

    def __init__(self, seed: int = 0):
        super().__init__(seed)
        self._issued: Set[Tuple[PublicKeyId, Hash]] = set()

    def _make_pair(self, material: bytes, owner: str) -> KeyPair:
        public = "pk-" + hashlib.sha256(b"pub" + material).hexdigest()[:24]
        private = "sk-" + hashlib.sha256(b"priv" + material).hexdigest()[:24]
        return KeyPair(public=public, private=private, owner=owner)

    def _sign(self, message: bytes, key: PrivateKeyHandle) -> Signature:
        sig = Signature(signer=self._public_of[key], digest_of=digest(message))
        self._issued.add((sig.signer, sig.digest_of))
        return sig

    def verify(self, message: bytes, sig: Signature, key: PublicKeyId) -> bool:
        return (
            sig.signer == key
            and sig.digest_of == digest(message)
            and (sig.signer, sig.digest_of) in self._issued
        )

    def seal(self, message: bytes, key: SymmetricKey) -> SealedBox:
        body = _xor(message, _keystream(key, len(message)))
        tag = hashlib.sha256(key + body).digest()[:8]
        return SealedBox(key_id=key_fingerprint(key), payload=body + tag)

    def open(self, box: SealedBox, key: SymmetricKey) -> bytes:
        if box.key_id != key_fingerprint(key):
            raise UnsealError("wrong key")
        body, tag = box.payload[:-8], box.payload[-8:]
        if hashlib.sha256(key + body).digest()[:8] != tag:
            raise UnsealError("payload altered")
        return _xor(body, _keystream(key, len(body)))

    def seal_for(self, message: bytes, recipient: PublicKeyId) -> SealedBox:
        stream = _keystream(b"servnet-box" + recipient.encode("utf-8"), len(message))
        return SealedBox(key_id=recipient, payload=_xor(message, stream))

    def _open_for(self, box: SealedBox, key: PrivateKeyHandle) -> bytes:
        stream = _keystream(b"servnet-box" + box.key_id.encode("utf-8"), len(box.payload))
        return _xor(box.payload, stream)


def make_backend(name: str, seed: int = 0) -> SecurityBackend:
    """Backend by name: "model" (default for simulations) or "crypto"."""
    if name == "model":
        return ModelBackend(seed)
    if name == "crypto":
        from message_security.crypto_backend import CryptoBackend

        return CryptoBackend(seed)
    raise ValueError(f"Unknown security backend: {name}")
