"""
Canonical byte encoding for protocol messages.

A message encodes as a 1-byte type tag followed by each field in the
message's fixed order, every field prefixed with its length as a 4-byte
big-endian integer. Both contract parties hash these bytes for messages
10 and 11, so the encoding must not depend on anything but field values.

Field encodings:
  bytes          as is
  str            UTF-8
  int            big-endian two's complement, minimal length (0 -> 0x00)
  Fraction       UTF-8 of "p/q" (or "p" when q == 1)
  Enum           encoding of its value
  Nonce          16-byte big-endian (longer only for N+1 overflow)
  TransactionId  initiator nonce || responder nonce
  Signature      nested canonical(SIGNATURE_TAG, signer, digest, blob)
  SealedBox      nested canonical(SEALED_TAG, key_id, payload)
  None           empty
  tuple/list     nested canonical(SEQUENCE_TAG, *items)
  objects with encode()  their own canonical encoding
"""

from enum import Enum
from fractions import Fraction
from typing import Any

from message_security.primitives import Nonce, SealedBox, Signature, TransactionId

SIGNATURE_TAG = 0xE0
SEALED_TAG = 0xE1
SEQUENCE_TAG = 0xE2
TRANSCRIPT_TAG = 0xF0


def encode_int(value: int) -> bytes:
    length = max(1, (value.bit_length() + 8) // 8)
    return value.to_bytes(length, "big", signed=True)


def decode_int(data: bytes) -> int:
    return int.from_bytes(data, "big", signed=True)


def encode_field(value: Any) -> bytes:
    if value is None:
        return b""
    if isinstance(value, bytes):
        return value
    if isinstance(value, Enum):
        return encode_field(value.value)
    if isinstance(value, bool):
        return b"\x01" if value else b"\x00"
    if isinstance(value, str):
        return value.encode("utf-8")
    if isinstance(value, int):
        return encode_int(value)
    if isinstance(value, Fraction):
        return str(value).encode("utf-8")
    if isinstance(value, (Nonce, TransactionId)):
        return value.to_bytes()
    if isinstance(value, Signature):
        return canonical(SIGNATURE_TAG, value.signer, value.digest_of, value.blob)
    if isinstance(value, SealedBox):
        return canonical(SEALED_TAG, value.key_id, value.payload)
    if isinstance(value, (tuple, list)):
        return canonical(SEQUENCE_TAG, *value)
    if hasattr(value, "encode"):
        return value.encode()
    raise TypeError(f"No canonical encoding for {type(value).__name__}")


def canonical(tag: int, *fields: Any) -> bytes:
    if not 0 <= tag <= 0xFF:
        raise ValueError(f"Type tag must fit one byte, got {tag}")
    out = bytearray([tag])
    for field in fields:
        data = encode_field(field)
        out += len(data).to_bytes(4, "big")
        out += data
    return bytes(out)


def split_fields(data: bytes) -> tuple:
    """Inverse of canonical(): (tag, [field bytes...])."""
    if not data:
        raise ValueError("Empty encoding")
    tag = data[0]
    fields = []
    pos = 1
    while pos < len(data):
        if pos + 4 > len(data):
            raise ValueError(f"Truncated length prefix at byte {pos}")
        length = int.from_bytes(data[pos:pos + 4], "big")
        pos += 4
        if pos + length > len(data):
            raise ValueError(f"Field at byte {pos} overruns the encoding")
        fields.append(data[pos:pos + length])
        pos += length
    return tag, fields
