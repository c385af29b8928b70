"""Scale-invariant (BFV-style) encryption over Z_q[X]/(X^n + 1) with Z_p slot batching.

Only what the inference protocol needs is provided: ciphertext + ciphertext,
ciphertext + plaintext and ciphertext x plaintext.  No relinearisation or rotation keys.
Ciphertexts are kept in the NTT domain of each RNS limb of q.
"""

from __future__ import annotations

import hashlib
import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .. import DEFAULT_N, DEFAULT_P
from .._rng import Prng
from .ntt import get_ntt

# 60-bit prime listed with the original parameter set; see NoiseBudgetExceeded tests.
SIXTY_BIT_Q = 1152921504382476289
# four primes below 2^31, each 1 mod 4096: q is about 2^124
DEFAULT_MODULI = (2147389441, 2147377153, 2147352577, 2147295233)


class HEError(Exception):
    pass


class ParamsMismatch(HEError):
    pass


class NoiseBudgetExceeded(HEError):
    """The running noise estimate no longer guarantees correct decryption."""


class NoiseOverflowError(HEError):
    """Decryption detected that the noise wrapped; the result would be garbage."""


@dataclass(frozen=True)
class HEParams:
    n: int = DEFAULT_N
    p: int = DEFAULT_P
    moduli: tuple[int, ...] = DEFAULT_MODULI
    noise_stddev: float = 3.2

    def __post_init__(self):
        n = self.n
        if n < 2 or n & (n - 1):
            raise ValueError("n must be a power of two")
        if self.p % 2 == 0 or self.p < 3:
            raise ValueError("p must be odd")
        if (self.p - 1) % (2 * n):
            raise ValueError("p must be 1 mod 2n for slot batching")
        object.__setattr__(self, "moduli", tuple(int(m) for m in self.moduli))
        for m in self.moduli:
            if (m - 1) % (2 * n):
                raise ValueError(f"ciphertext modulus {m} is not 1 mod 2n")
        for i, a in enumerate(self.moduli):
            for b in self.moduli[i + 1:]:
                if math.gcd(a, b) != 1:
                    raise ValueError("RNS moduli must be coprime")
        if self.p >= self.q:
            raise ValueError("p must be below q")

    @classmethod
    def single_modulus(cls, q: int, **kw) -> "HEParams":
        return cls(moduli=(q,), **kw)

    @property
    def q(self) -> int:
        return math.prod(self.moduli)

    @property
    def delta(self) -> int:
        return (self.q + self.p // 2) // self.p

    @property
    def wrap(self) -> int:
        """|q - delta * p|, the residue that leaks into the noise on every reduction mod p."""
        return abs(self.q - self.delta * self.p)

    @property
    def limbs(self) -> int:
        return len(self.moduli)

    @property
    def eta(self) -> int:
        return max(1, round(2 * self.noise_stddev**2))

    @cached_property
    def digest(self) -> bytes:
        desc = f"falcon-bfv|{self.n}|{self.p}|{','.join(map(str, self.moduli))}|{self.noise_stddev}"
        return hashlib.sha256(desc.encode()).digest()

    @cached_property
    def dtype(self):
        return np.int64 if max(self.moduli) < 1 << 31 else object

    @cached_property
    def modcol(self) -> np.ndarray:
        return np.array(self.moduli, dtype=self.dtype).reshape(-1, 1)

    @cached_property
    def delta_col(self) -> np.ndarray:
        return np.array([self.delta % m for m in self.moduli], dtype=self.dtype).reshape(-1, 1)

    @cached_property
    def budget_bits(self) -> float:
        """log2 of the largest tolerable noise, delta / 2."""
        return math.log2(self.delta) - 1

    @cached_property
    def fresh_noise_bits(self) -> float:
        s = self.noise_stddev
        return log2_sum(math.log2(6 * s * (1 + 2 * math.sqrt(2 * self.n / 3))), math.log2(self.wrap + 1))

    @cached_property
    def _crt(self):
        q = self.q
        return [(q // m) * pow(q // m, -1, m) % q for m in self.moduli]

    # ring helpers ---------------------------------------------------------

    def lift(self, coeffs) -> np.ndarray:
        """Signed integer coefficients to (limbs, n) residues."""
        c = np.asarray(coeffs)
        if self.dtype is object:
            return np.array([[int(v) % m for v in c] for m in self.moduli], dtype=object)
        return c.astype(np.int64)[None, :] % self.modcol

    def ntt(self, limbs: np.ndarray) -> np.ndarray:
        return np.stack([get_ntt(self.n, m).forward(limbs[i]) for i, m in enumerate(self.moduli)])

    def intt(self, limbs: np.ndarray) -> np.ndarray:
        return np.stack([get_ntt(self.n, m).inverse(limbs[i]) for i, m in enumerate(self.moduli)])

    def crt(self, limbs: np.ndarray) -> np.ndarray:
        """Reconstruct centered integers in (-q/2, q/2] as an object array."""
        q = self.q
        acc = np.zeros(self.n, dtype=object)
        for i, c in enumerate(self._crt):
            acc = acc + limbs[i].astype(object) * c
        acc = acc % q
        return np.where(acc > q // 2, acc - q, acc)


def log2_sum(*bits: float) -> float:
    return math.log2(sum(2.0**b for b in bits))


# ---------------------------------------------------------------------------
# keys and plaintexts


@dataclass(frozen=True, eq=False)
class SecretKey:
    params: HEParams
    s: np.ndarray
    s_ntt: np.ndarray


@dataclass(frozen=True, eq=False)
class PublicKey:
    params: HEParams
    b: np.ndarray
    a: np.ndarray

    def to_bytes(self) -> bytes:
        return _pack(self.params, [self.b, self.a])

    @classmethod
    def from_bytes(cls, buf: bytes, params: HEParams) -> "PublicKey":
        b, a = _unpack(buf, params)
        return cls(params, b, a)

    def __eq__(self, other):
        return isinstance(other, PublicKey) and self.to_bytes() == other.to_bytes()


@dataclass(frozen=True, eq=False)
class KeyPair:
    secret: SecretKey
    public: PublicKey

    def __eq__(self, other):
        return (
            isinstance(other, KeyPair)
            and self.public == other.public
            and np.array_equal(self.secret.s, other.secret.s)
        )


def keygen(params: HEParams, seed) -> KeyPair:
    rng = Prng(seed, "bfv-keygen")
    s = rng.ternary(params.n)
    s_ntt = params.ntt(params.lift(s))
    a = np.stack([rng.uniform(m, params.n) for m in params.moduli]).astype(params.dtype)
    e = params.ntt(params.lift(rng.cbd(params.eta, params.n)))
    b = (-(a * s_ntt + e)) % params.modcol
    return KeyPair(SecretKey(params, s, s_ntt), PublicKey(params, b, a))


@dataclass(eq=False)
class PackedPlaintext:
    slots: np.ndarray

    def __post_init__(self):
        self.slots = np.asarray(self.slots, dtype=np.int64)

    def __eq__(self, other):
        return isinstance(other, PackedPlaintext) and np.array_equal(self.slots, other.slots)


def encode_slots(values, params: HEParams) -> PackedPlaintext:
    v = np.asarray(values, dtype=np.int64).reshape(-1)
    if v.size > params.n:
        raise ValueError(f"at most {params.n} slot values")
    if v.size and (v.min() < 0 or v.max() >= params.p):
        raise ValueError("slot values must lie in [0, p)")
    slots = np.zeros(params.n, dtype=np.int64)
    slots[: v.size] = v
    return PackedPlaintext(slots)


def decode_slots(pt: PackedPlaintext) -> np.ndarray:
    return pt.slots.copy()


def slots_to_coeffs(slots: np.ndarray, params: HEParams) -> np.ndarray:
    return get_ntt(params.n, params.p).inverse(slots)


def coeffs_to_slots(coeffs: np.ndarray, params: HEParams) -> np.ndarray:
    return get_ntt(params.n, params.p).forward(coeffs)


class PlainOperand:
    """A plaintext with its ring forms cached; reuse when the same plaintext meets many ciphertexts."""

    def __init__(self, pt: PackedPlaintext | np.ndarray, params: HEParams):
        if not isinstance(pt, PackedPlaintext):
            pt = encode_slots(pt, params)
        self.params = params
        self.pt = pt
        coeffs = slots_to_coeffs(pt.slots, params)
        self.centered = np.where(coeffs > params.p // 2, coeffs - params.p, coeffs)
        self.norm = int(np.abs(self.centered).max()) if self.centered.size else 0

    @cached_property
    def mul_form(self) -> np.ndarray:
        return self.params.ntt(self.params.lift(self.centered))

    @cached_property
    def add_form(self) -> np.ndarray:
        params = self.params
        coeffs = self.centered % params.p
        if params.dtype is object:
            scaled = np.array(
                [[int(c) * params.delta % m for c in coeffs] for m in params.moduli], dtype=object
            )
        else:
            scaled = coeffs[None, :] * params.delta_col % params.modcol
        return params.ntt(scaled)


def _operand(pt, params) -> PlainOperand:
    return pt if isinstance(pt, PlainOperand) else PlainOperand(pt, params)


# ---------------------------------------------------------------------------
# ciphertexts


@dataclass(eq=False)
class PackedCiphertext:
    params: HEParams
    c0: np.ndarray
    c1: np.ndarray
    noise_bits: float = field(default=0.0)

    def to_bytes(self) -> bytes:
        return _pack(self.params, [self.c0, self.c1])

    @classmethod
    def from_bytes(cls, buf: bytes, params: HEParams, noise_bits: float | None = None) -> "PackedCiphertext":
        c0, c1 = _unpack(buf, params)
        return cls(params, c0, c1, params.fresh_noise_bits if noise_bits is None else noise_bits)

    def noise_budget(self) -> float:
        return self.params.budget_bits - self.noise_bits

    def __eq__(self, other):
        return isinstance(other, PackedCiphertext) and self.to_bytes() == other.to_bytes()


def ciphertext_size(params: HEParams) -> int:
    return 32 + 4 + 2 * params.limbs * params.n * 8


def _pack(params: HEParams, comps) -> bytes:
    parts = [params.digest, struct.pack("<I", len(comps) * params.limbs)]
    for comp in comps:
        for limb in comp:
            parts.append(np.asarray([int(v) for v in limb] if params.dtype is object else limb, dtype="<u8").tobytes())
    return b"".join(parts)


def _unpack(buf: bytes, params: HEParams):
    if len(buf) < 36 or buf[:32] != params.digest:
        raise ParamsMismatch("ciphertext was produced under different parameters")
    (count,) = struct.unpack_from("<I", buf, 32)
    n, L = params.n, params.limbs
    if count != 2 * L or len(buf) != 36 + count * n * 8:
        raise HEError("malformed ciphertext encoding")
    raw = np.frombuffer(buf, dtype="<u8", offset=36).reshape(2, L, n)
    if params.dtype is object:
        arr = np.array([[[int(v) for v in limb] for limb in comp] for comp in raw], dtype=object)
    else:
        arr = raw.astype(np.int64)
    if any((arr[:, i] >= m).any() for i, m in enumerate(params.moduli)):
        raise HEError("coefficient out of range")
    return arr[0].copy(), arr[1].copy()


def _check(*cts):
    digest = cts[0].params.digest
    for ct in cts[1:]:
        if ct.params.digest != digest:
            raise ParamsMismatch("operands use different parameters")


def _enc_zero_parts(pk: PublicKey, rng: Prng):
    params = pk.params
    u = params.ntt(params.lift(rng.ternary(params.n)))
    e1 = params.lift(rng.cbd(params.eta, params.n))
    e2 = params.ntt(params.lift(rng.cbd(params.eta, params.n)))
    return u, e1, e2


def encrypt(pt: PackedPlaintext, pk: PublicKey, rng: Prng | None = None) -> PackedCiphertext:
    params = pk.params
    rng = rng or Prng(None, "bfv-encrypt")
    u, e1, e2 = _enc_zero_parts(pk, rng)
    coeffs = slots_to_coeffs(pt.slots, params)
    if params.dtype is object:
        dm = np.array([[(int(e) + params.delta * int(c)) % m for e, c in zip(e1[i], coeffs)]
                       for i, m in enumerate(params.moduli)], dtype=object)
    else:
        dm = (e1 + coeffs[None, :] * params.delta_col) % params.modcol
    mod = params.modcol
    c0 = (pk.b * u + params.ntt(dm)) % mod
    c1 = (pk.a * u + e2) % mod
    return PackedCiphertext(params, c0, c1, params.fresh_noise_bits)


def _phase(ct: PackedCiphertext, sk: SecretKey) -> np.ndarray:
    params = ct.params
    return params.crt(params.intt((ct.c0 + ct.c1 * sk.s_ntt) % params.modcol))


def decrypt_with_noise(ct: PackedCiphertext, sk: SecretKey) -> tuple[PackedPlaintext, float]:
    """Decrypt and report the measured noise in bits: log2 of max |v - q m / p| over coefficients."""
    params = ct.params
    if sk.params.digest != params.digest:
        raise ParamsMismatch("key and ciphertext parameters differ")
    q, p = params.q, params.p
    v = _phase(ct, sk)
    num = v * p
    m = (num + q // 2) // q
    resid = num - m * q
    worst = max(abs(int(r)) for r in resid)
    if 4 * worst > q:
        raise NoiseOverflowError("decryption noise exceeded the budget")
    coeffs = np.array([int(x) % p for x in m], dtype=np.int64)
    noise = math.log2(worst / p) if worst else 0.0
    return PackedPlaintext(coeffs_to_slots(coeffs, params)), noise


def decrypt(ct: PackedCiphertext, sk: SecretKey) -> PackedPlaintext:
    return decrypt_with_noise(ct, sk)[0]


# ---------------------------------------------------------------------------
# homomorphic operations


class OpLog(Counter):
    """Counts of homomorphic operations; keys: SIMDAdd, SIMDAddPlain, SIMDMul, Rotate."""

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.setdefault("Rotate", 0)


def _bump(log, key):
    if log is not None:
        log[key] += 1


def simd_add_ct(a: PackedCiphertext, b: PackedCiphertext, log: OpLog | None = None) -> PackedCiphertext:
    _check(a, b)
    _bump(log, "SIMDAdd")
    mod = a.params.modcol
    return PackedCiphertext(a.params, (a.c0 + b.c0) % mod, (a.c1 + b.c1) % mod, log2_sum(a.noise_bits, b.noise_bits))


def simd_add_pt(a: PackedCiphertext, b, log: OpLog | None = None) -> PackedCiphertext:
    op = _operand(b, a.params)
    _bump(log, "SIMDAddPlain")
    params = a.params
    # carrying the reduction mod p inside delta*m costs at most r_q = q mod p
    noise = log2_sum(a.noise_bits, math.log2(params.wrap + 1))
    return PackedCiphertext(params, (a.c0 + op.add_form) % params.modcol, a.c1.copy(), noise)


def simd_mul_pt(a: PackedCiphertext, b, log: OpLog | None = None, strict: bool = True) -> PackedCiphertext:
    params = a.params
    op = _operand(b, params)
    _bump(log, "SIMDMul")
    mod = params.modcol
    n = params.n
    spread = math.log2(6 * math.sqrt(n))
    norm = math.log2(max(op.norm, 1))
    own = a.noise_bits + norm + spread
    # wrap term: delta * (m b) differs from delta * [m b]_p by r_q * k with |k| <~ n ||b|| / 2
    wrap = math.log2(params.wrap + 1) + norm + spread - 1
    noise = log2_sum(own, wrap) if op.norm else 0.0
    if strict and noise >= params.budget_bits:
        raise NoiseBudgetExceeded(
            f"estimated noise 2^{noise:.1f} exceeds the budget 2^{params.budget_bits:.1f}"
        )
    f = op.mul_form
    return PackedCiphertext(params, a.c0 * f % mod, a.c1 * f % mod, noise)


def rerandomize(a: PackedCiphertext, pk: PublicKey, rng: Prng | None = None) -> PackedCiphertext:
    params = a.params
    rng = rng or Prng(None, "bfv-rerandomize")
    u, e1, e2 = _enc_zero_parts(pk, rng)
    mod = params.modcol
    c0 = (a.c0 + pk.b * u + params.ntt(e1)) % mod
    c1 = (a.c1 + pk.a * u + e2) % mod
    return PackedCiphertext(params, c0, c1, log2_sum(a.noise_bits, params.fresh_noise_bits))
