"""Deterministic, seedable randomness backed by AES-256-CTR.

Every party-side random draw in the package goes through :class:`Prng` so that a
session run twice with the same seeds produces byte-identical transcripts.
"""

from __future__ import annotations

import hashlib
import os

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes


def fresh_seed() -> bytes:
    return os.urandom(32)


def seed_bytes(seed: bytes | int | str | None) -> bytes:
    """Normalise user-facing seed values to 32 bytes."""
    if seed is None:
        return fresh_seed()
    if isinstance(seed, int):
        seed = seed.to_bytes(16, "little", signed=True)
    elif isinstance(seed, str):
        seed = seed.encode()
    return hashlib.sha256(b"falcon-seed" + seed).digest()


class Prng:
    """A labelled keystream. ``Prng(seed, "masks")`` and ``Prng(seed, "labels")`` are independent."""

    def __init__(self, seed: bytes | int | str | None, label: str = ""):
        key = hashlib.sha256(seed_bytes(seed) + label.encode()).digest()
        self._enc = Cipher(algorithms.AES(key), modes.CTR(b"\x00" * 16)).encryptor()

    def child(self, label: str) -> "Prng":
        return Prng(self.bytes(32), label)

    def bytes(self, n: int) -> bytes:
        return self._enc.update(b"\x00" * n)

    def uint64(self, size) -> np.ndarray:
        count = int(np.prod(size))
        return np.frombuffer(self.bytes(8 * count), dtype="<u8").reshape(size).copy()

    def uniform(self, modulus: int, size) -> np.ndarray:
        """Values in [0, modulus). Reduction of 64-bit draws; bias is below 2^-30 for modulus < 2^34."""
        if modulus <= 0:
            raise ValueError("modulus must be positive")
        if modulus < 2**62:
            return (self.uint64(size) % np.uint64(modulus)).astype(np.int64)
        count = int(np.prod(size))
        nbytes = (modulus.bit_length() + 64 + 7) // 8
        raw = self.bytes(nbytes * count)
        vals = [int.from_bytes(raw[i * nbytes:(i + 1) * nbytes], "little") % modulus for i in range(count)]
        return np.array(vals, dtype=object).reshape(size)

    def randint(self, bits: int) -> int:
        return int.from_bytes(self.bytes((bits + 7) // 8), "little") & ((1 << bits) - 1)

    def bits(self, size) -> np.ndarray:
        return (self.uint64(size) & np.uint64(1)).astype(np.int64)

    def ternary(self, size) -> np.ndarray:
        return (self.uint64(size) % np.uint64(3)).astype(np.int64) - 1

    def cbd(self, eta: int, size) -> np.ndarray:
        """Centered binomial samples, variance eta / 2."""
        count = int(np.prod(size))
        raw = np.frombuffer(self.bytes(2 * eta * count), dtype=np.uint8).reshape(count, 2 * eta) & 1
        a = raw[:, :eta].sum(axis=1).astype(np.int64)
        b = raw[:, eta:].sum(axis=1).astype(np.int64)
        return (a - b).reshape(size)
