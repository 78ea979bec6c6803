"""Canonical byte encodings, digests and simulated signatures."""

from __future__ import annotations

import hashlib

DIGEST_SIZE = 32


def u64(value: int) -> bytes:
    return int(value).to_bytes(8, "big", signed=False)


def i64(value: int) -> bytes:
    return int(value).to_bytes(8, "big", signed=True)


def field(data: bytes) -> bytes:
    """Length-prefix one field (4-byte big-endian length)."""
    return len(data).to_bytes(4, "big") + data


def millis(t: float) -> int:
    """Simulation seconds as 64-bit fixed-point milliseconds."""
    return int(round(t * 1000.0))


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def leading_zero_bits(data: bytes) -> int:
    n = 0
    for byte in data:
        if byte == 0:
            n += 8
            continue
        return n + 8 - byte.bit_length()
    return n


class Keyring:
    """Deterministic per-node secrets for simulated signatures.

    A signature is ``sha256(secret || preimage)``; verification recomputes it.
    Nothing here is meant to resist forgery.
    """

    def __init__(self, salt: bytes = b""):
        self.salt = salt
        self._cache: dict[int, bytes] = {}

    def secret(self, node: int) -> bytes:
        s = self._cache.get(node)
        if s is None:
            s = digest(b"dagconsensus/node-secret" + field(self.salt) + u64(node))
            self._cache[node] = s
        return s

    def sign(self, node: int, preimage: bytes) -> bytes:
        return digest(self.secret(node) + preimage)

    def verify(self, node: int, preimage: bytes, signature: bytes) -> bool:
        return self.sign(node, preimage) == signature


DEFAULT_KEYRING = Keyring()
