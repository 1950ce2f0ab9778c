"""
Message security model: signatures, sealing, canonical encoding, nonces.
"""
from fractions import Fraction

import pytest

from message_security import (
    KeyNotHeldError,
    Nonce,
    NoncePool,
    Signature,
    TransactionId,
    UnsealError,
    canonical,
    digest,
    encode_field,
    make_backend,
    split_fields,
)

BACKENDS = ["model", "crypto"]


@pytest.fixture(params=BACKENDS)
def any_backend(request):
    return make_backend(request.param, seed=3)


def test_sign_and_verify(any_backend):
    pair = any_backend.keygen(1, "S1")
    sig = any_backend.sign(b"hello", pair.private, actor="S1")
    assert any_backend.verify(b"hello", sig, pair.public)
    assert not any_backend.verify(b"hello!", sig, pair.public)


def test_verify_rejects_wrong_signer(any_backend):
    alice = any_backend.keygen(1, "S1")
    bob = any_backend.keygen(2, "S2")
    sig = any_backend.sign(b"hello", alice.private, actor="S1")
    assert not any_backend.verify(b"hello", sig, bob.public)


def test_only_the_holder_can_sign(any_backend):
    pair = any_backend.keygen(1, "S1")
    with pytest.raises(KeyNotHeldError):
        any_backend.sign(b"hello", pair.private, actor="MALLORY")


def test_fabricated_signature_does_not_verify(any_backend):
    pair = any_backend.keygen(1, "S1")
    forged = Signature(signer=pair.public, digest_of=digest(b"pay me"), blob=bytes(64))
    assert not any_backend.verify(b"pay me", forged, pair.public)


def test_keygen_is_deterministic_per_seed(any_backend):
    first = any_backend.keygen(1, "S1")
    assert any_backend.keygen(1, "S1") == first
    assert any_backend.keygen(2, "S2").public != first.public
    with pytest.raises(ValueError):
        any_backend.keygen(1, "S2")


def test_symmetric_seal_and_open(any_backend):
    key = any_backend.new_symmetric_key("subtree:A1")
    box = any_backend.seal(b"record", key)
    assert any_backend.open(box, key) == b"record"


def test_open_with_wrong_key_fails(any_backend):
    key = any_backend.new_symmetric_key("subtree:A1")
    other = any_backend.new_symmetric_key("subtree:A1")
    assert key != other
    with pytest.raises(UnsealError):
        any_backend.open(any_backend.seal(b"record", key), other)


def test_altered_payload_fails(any_backend):
    key = any_backend.new_symmetric_key("subtree:A1")
    box = any_backend.seal(b"record", key)
    tampered = type(box)(key_id=box.key_id, payload=box.payload[:-1] + bytes([box.payload[-1] ^ 1]))
    with pytest.raises(UnsealError):
        any_backend.open(tampered, key)


def test_public_key_sealing(any_backend):
    alice = any_backend.keygen(1, "S1")
    bob = any_backend.keygen(2, "S2")
    box = any_backend.seal_for(b"ack", alice.public)
    assert any_backend.open_for(box, alice.private, actor="S1") == b"ack"
    with pytest.raises(KeyNotHeldError):
        any_backend.open_for(box, alice.private, actor="S2")
    with pytest.raises(UnsealError):
        any_backend.open_for(box, bob.private, actor="S2")


def test_unknown_backend():
    with pytest.raises(ValueError):
        make_backend("rot13")


def test_canonical_layout():
    data = canonical(0x10, "a", 5, b"")
    assert data == b"\x10" + b"\x00\x00\x00\x01a" + b"\x00\x00\x00\x01\x05" + b"\x00\x00\x00\x00"
    assert split_fields(data) == (0x10, [b"a", b"\x05", b""])


def test_canonical_rejects_wide_tag():
    with pytest.raises(ValueError):
        canonical(256, "a")


def test_split_fields_rejects_truncation():
    with pytest.raises(ValueError):
        split_fields(canonical(0x10, "abc")[:-1])
    with pytest.raises(ValueError):
        split_fields(b"")


def test_field_encodings():
    assert encode_field(Fraction(3, 4)) == b"3/4"
    assert encode_field(Fraction(2)) == b"2"
    assert encode_field(None) == b""
    assert encode_field(True) == b"\x01"
    assert encode_field(Nonce(1)) == bytes(15) + b"\x01"
    with pytest.raises(TypeError):
        encode_field(1.5)


def test_nonce_successor_and_transaction_id():
    n = Nonce(41)
    assert n.succ() == Nonce(42)
    txn = TransactionId(Nonce(1), Nonce(2))
    assert TransactionId.parse(str(txn)) == txn
    with pytest.raises(ValueError):
        Nonce(-1)
    with pytest.raises(ValueError):
        TransactionId.parse("abc")


def test_nonce_pool_never_repeats():
    pool = NoncePool(seed=9)
    drawn = [pool.fresh_nonce("S1") for _ in range(2000)]
    assert len(set(drawn)) == len(drawn)


def test_nonce_pool_is_seeded_per_node():
    a, b = NoncePool(seed=9), NoncePool(seed=9)
    assert [a.fresh_nonce("S1") for _ in range(5)] == [b.fresh_nonce("S1") for _ in range(5)]
    assert NoncePool(seed=9).fresh_nonce("S1") != NoncePool(seed=9).fresh_nonce("S2")
    assert NoncePool(seed=9).fresh_nonce("S1") != NoncePool(seed=10).fresh_nonce("S1")
