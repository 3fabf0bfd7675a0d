"""Light tile obfuscation.

Protected full-resolution tiles are XORed with a keystream generated by
repeated SHA-256 over key, per-tile nonce, and a block counter.  This is a
lightweight gate, deliberately not presented as strong cryptography: the
point is that a stored or sniffed blob is not a servable JPEG without the
key held in the image metadata.

The same transform encrypts and decrypts.  The first keystream block is
re-derived (bumping a salt byte) until its leading 16-bit word is nonzero,
so the JPEG magic bytes are always altered, even under an all-zero key.
"""

from __future__ import annotations

import hashlib
import struct

KEY_LEN = 16
_BLOCK = hashlib.sha256().digest_size


class TileKeyError(ValueError):
    """Key is not exactly KEY_LEN bytes."""


def _keystream(key: bytes, nonce: bytes, length: int) -> bytes:
    prefix = key + struct.pack(">H", len(nonce)) + nonce
    salt = 0
    while True:
        first = hashlib.sha256(prefix + bytes([salt]) + (0).to_bytes(8, "big")).digest()
        if first[:2] != b"\x00\x00":
            break
        salt += 1  # vanishingly rare; keeps magic-byte alteration unconditional
    out = bytearray(first)
    counter = 1
    while len(out) < length:
        out += hashlib.sha256(prefix + bytes([salt]) + counter.to_bytes(8, "big")).digest()
        counter += 1
    return bytes(out[:length])


def light_encrypt(blob: bytes, key: bytes, nonce: bytes) -> bytes:
    """XOR ``blob`` with the (key, nonce) keystream; self-inverse."""
    if len(key) != KEY_LEN:
        raise TileKeyError(f"key must be {KEY_LEN} bytes, got {len(key)}")
    if not blob:
        return b""
    stream = _keystream(key, nonce, len(blob))
    n = len(blob)
    return (int.from_bytes(blob, "big") ^ int.from_bytes(stream, "big")).to_bytes(n, "big")


def light_decrypt(blob: bytes, key: bytes, nonce: bytes) -> bytes:
    return light_encrypt(blob, key, nonce)


def derive_cut_key(theme: str, gridid: str, acquired_iso: str) -> bytes:
    """Deterministic per-cut key so reprocessing a cut reproduces its bytes."""
    material = f"terratile.cut.key/{theme}/{gridid}/{acquired_iso}".encode()
    return hashlib.sha256(material).digest()[:KEY_LEN]


def key_id(key: bytes) -> str:
    """Short stable identifier stored next to encrypted tiles."""
    return hashlib.sha256(b"terratile.key.id/" + key).hexdigest()[:12]
