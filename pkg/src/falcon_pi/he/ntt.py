"""Negacyclic number-theoretic transform over Z_q[X]/(X^n + 1)."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


def _bitrev(i: int, bits: int) -> int:
    return int(format(i, f"0{bits}b")[::-1], 2) if bits else 0


class NegacyclicNTT:
    """Forward transform evaluates a polynomial at the odd powers of a 2n-th root, bit-reversed.

    Moduli below 2^31 run in int64; larger moduli fall back to Python-int object arrays.
    """

    def __init__(self, n: int, q: int):
        if n < 1 or n & (n - 1):
            raise ValueError("n must be a power of two")
        if (q - 1) % (2 * n):
            raise ValueError(f"modulus {q} is not 1 mod 2n")
        self.n, self.q = n, q
        self.dtype = np.int64 if q < 1 << 31 else object
        psi = self._find_psi()
        bits = n.bit_length() - 1
        psi_inv = pow(psi, -1, q)
        fwd = [pow(psi, _bitrev(i, bits), q) for i in range(n)]
        inv = [pow(psi_inv, _bitrev(i, bits), q) for i in range(n)]
        self._fwd = np.array(fwd, dtype=self.dtype)
        self._inv = np.array(inv, dtype=self.dtype)
        self._n_inv = pow(n, -1, q)

    def _find_psi(self) -> int:
        n, q = self.n, self.q
        for g in range(2, 10_000):
            psi = pow(g, (q - 1) // (2 * n), q)
            if pow(psi, n, q) == q - 1:
                return psi
        raise ValueError(f"no primitive 2n-th root of unity mod {q}")

    def asarray(self, a) -> np.ndarray:
        a = np.asarray(a)
        if self.dtype is object:
            return np.array([int(v) % self.q for v in a.reshape(-1)], dtype=object).reshape(a.shape)
        return a.astype(np.int64) % self.q

    def forward(self, a) -> np.ndarray:
        q, n = self.q, self.n
        a = self.asarray(a)
        lead = a.shape[:-1]
        m, t = 1, n
        while m < n:
            t //= 2
            blk = a.reshape(lead + (m, 2, t))
            s = self._fwd[m:2 * m].reshape(m, 1)
            u = blk[..., 0, :]
            v = blk[..., 1, :] * s % q
            a = np.stack([(u + v) % q, (u - v) % q], axis=-2).reshape(lead + (n,))
            m *= 2
        return a

    def inverse(self, a) -> np.ndarray:
        q, n = self.q, self.n
        a = self.asarray(a)
        lead = a.shape[:-1]
        m, t = n, 1
        while m > 1:
            h = m // 2
            blk = a.reshape(lead + (h, 2, t))
            s = self._inv[h:2 * h].reshape(h, 1)
            u = blk[..., 0, :]
            v = blk[..., 1, :]
            a = np.stack([(u + v) % q, (u - v) % q * s % q], axis=-2).reshape(lead + (n,))
            t *= 2
            m = h
        return a * self._n_inv % q


@lru_cache(maxsize=None)
def get_ntt(n: int, q: int) -> NegacyclicNTT:
    return NegacyclicNTT(n, q)


def negacyclic_mul_naive(a, b, q: int) -> list[int]:
    """Schoolbook product mod (X^n + 1, q); test oracle."""
    n = len(a)
    out = [0] * n
    for i in range(n):
        if a[i]:
            for j in range(n):
                k = i + j
                if k < n:
                    out[k] += int(a[i]) * int(b[j])
                else:
                    out[k - n] -= int(a[i]) * int(b[j])
    return [v % q for v in out]
