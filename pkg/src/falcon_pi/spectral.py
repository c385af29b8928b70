"""Two-dimensional Fourier transforms.

Two flavours live here:

* a fixed-point float DFT (``fft2d`` / ``ifft2d``) whose coefficients are integers at
  ``2^frac_bits``; used by the plaintext tooling and as a reference;
* :class:`ModularFourier`, an exact DFT over the Gaussian integers mod p.  Masked shares
  are uniform in Z_p, so the encrypted path needs a transform that is Z_p-linear.  With
  zeta of order L in Z_p and iota^2 = -1, the twiddles C_k = (zeta^k + zeta^-k)/2 and
  S_k = (zeta^k - zeta^-k)/(2 iota) behave exactly like cos and sin: a real input gets a
  real/imaginary split and the convolution theorem holds without rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import DEFAULT_P
from .fixed_point import round_div, round_half_away


@dataclass
class FreqPlanes:
    real: np.ndarray
    imag: np.ndarray
    frac_bits: int = 0

    def __post_init__(self):
        self.real = np.asarray(self.real, dtype=np.int64)
        self.imag = np.asarray(self.imag, dtype=np.int64)
        if self.real.shape != self.imag.shape:
            raise ValueError("real and imaginary planes differ in shape")

    @property
    def shape(self):
        return self.real.shape

    def values(self) -> np.ndarray:
        return (self.real + 1j * self.imag) / (1 << self.frac_bits)


def fft2d(plane, frac_bits: int = 0) -> FreqPlanes:
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2 or 0 in plane.shape:
        raise ValueError("expected a non-empty 2-D plane")
    spec = np.fft.fft2(plane) * (1 << frac_bits)
    return FreqPlanes(round_half_away(spec.real), round_half_away(spec.imag), frac_bits)


def ifft2d(fp: FreqPlanes) -> np.ndarray:
    return np.fft.ifft2(fp.values()).real


def pointwise_complex_mul(a: FreqPlanes, b: FreqPlanes) -> FreqPlanes:
    if a.shape != b.shape:
        raise ValueError("extent mismatch")
    if a.frac_bits != b.frac_bits:
        raise ValueError("scale mismatch")
    ar, ai = a.real.astype(object), a.imag.astype(object)
    br, bi = b.real.astype(object), b.imag.astype(object)
    re = round_div(ar * br - ai * bi, a.frac_bits)
    im = round_div(ar * bi + ai * br, a.frac_bits)
    return FreqPlanes(re.astype(np.int64), im.astype(np.int64), a.frac_bits)


def zero_pad_filter(f, w: int, h: int) -> np.ndarray:
    f = np.asarray(f)
    if f.shape[0] > w or f.shape[1] > h:
        raise ValueError("filter larger than target plane")
    out = np.zeros((w, h), dtype=f.dtype)
    out[: f.shape[0], : f.shape[1]] = f
    return out


def circular_conv_oracle(x, f):
    """Direct circular convolution y(u,v) = sum x(a,b) f(u-a, v-b); integer inputs stay exact."""
    x, f = np.asarray(x), np.asarray(f)
    if x.shape != f.shape:
        raise ValueError("extent mismatch")
    w, h = x.shape
    dtype = object if x.dtype.kind in "iuO" and f.dtype.kind in "iuO" else np.float64
    y = np.zeros((w, h), dtype=dtype)
    for a in range(w):
        for b in range(h):
            if x[a, b]:
                y += x[a, b] * np.roll(np.roll(f.astype(dtype), a, axis=0), b, axis=1)
    return y


# ---------------------------------------------------------------------------
# exact transform over Z_p[i]


def _factorize(m: int) -> dict[int, int]:
    out, d = {}, 2
    while d * d <= m:
        while m % d == 0:
            out[d] = out.get(d, 0) + 1
            m //= d
        d += 1
    if m > 1:
        out[m] = out.get(m, 0) + 1
    return out


@lru_cache(maxsize=None)
def _group_factors(p: int) -> tuple[int, ...]:
    return tuple(sorted(_factorize(p - 1)))


@lru_cache(maxsize=None)
def allowed_lengths(p: int = DEFAULT_P, limit: int = 4096) -> tuple[int, ...]:
    """Transform lengths L with an element of order L in Z_p (the divisors of p - 1)."""
    f = _factorize(p - 1)
    divs = [1]
    for prime, e in f.items():
        divs = [d * prime**k for d in divs for k in range(e + 1)]
    return tuple(sorted(d for d in divs if d <= limit))


def transform_length(minimum: int, p: int = DEFAULT_P) -> int:
    for L in allowed_lengths(p):
        if L >= minimum:
            return L
    raise ValueError(f"no transform length >= {minimum} divides p - 1")


def root_of_unity(order: int, p: int) -> int:
    if (p - 1) % order:
        raise ValueError(f"{order} does not divide p - 1")
    primes = _factorize(order)
    for g in range(2, p):
        z = pow(g, (p - 1) // order, p)
        if all(pow(z, order // r, p) != 1 for r in primes):
            return z
    raise ValueError("no root found")


@lru_cache(maxsize=None)
def imaginary_unit(p: int) -> int:
    if p % 4 != 1:
        raise ValueError("p must be 1 mod 4")
    return root_of_unity(4, p)


def matmul_mod(a: np.ndarray, b: np.ndarray, p: int) -> np.ndarray:
    """(a @ b) mod p for entries below 2^31 without int64 overflow (16-bit limb split)."""
    if p >= 1 << 31:
        raise ValueError("modulus too large for the int64 path")
    a = np.asarray(a, dtype=np.int64) % p
    b = np.asarray(b, dtype=np.int64) % p
    if a.shape[-1] > 1 << 11:
        raise ValueError("inner dimension too large")
    lo = a & 0xFFFF
    hi = a >> 16
    r_hi = (hi @ b) % p
    r_lo = (lo @ b) % p
    return ((r_hi << 16) + r_lo) % p


@lru_cache(maxsize=None)
def _twiddles(L: int, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Matrices C[u, x] and S[u, x] with omega^(-ux) = C - i S."""
    if L == 1:
        return np.ones((1, 1), dtype=np.int64), np.zeros((1, 1), dtype=np.int64)
    zeta = root_of_unity(L, p)
    iota = imaginary_unit(p)
    inv2 = pow(2, -1, p)
    inv2i = pow(2 * iota, -1, p)
    zk = np.array([pow(zeta, k, p) for k in range(L)], dtype=object)
    zik = np.array([pow(zeta, -k % L, p) if k else 1 for k in range(L)], dtype=object)
    cos = np.array([(int(a) + int(b)) * inv2 % p for a, b in zip(zk, zik)], dtype=np.int64)
    sin = np.array([(int(a) - int(b)) * inv2i % p for a, b in zip(zk, zik)], dtype=np.int64)
    idx = np.outer(np.arange(L), np.arange(L)) % L
    C, S = cos[idx], sin[idx]
    C.setflags(write=False)
    S.setflags(write=False)
    return C, S


def _cmatmul(mr, mi, xr, xi, p):
    """(mr + i mi) @ (xr + i xi) mod p."""
    rr = matmul_mod(mr, xr, p)
    ii = matmul_mod(mi, xi, p)
    ri = matmul_mod(mr, xi, p)
    ir = matmul_mod(mi, xr, p)
    return (rr - ii) % p, (ri + ir) % p


def _cmatmul_right(xr, xi, mr, mi, p):
    """(xr + i xi) @ (mr + i mi) mod p."""
    rr = matmul_mod(xr, mr, p)
    ii = matmul_mod(xi, mi, p)
    ri = matmul_mod(xr, mi, p)
    ir = matmul_mod(xi, mr, p)
    return (rr - ii) % p, (ri + ir) % p


class ModularFourier:
    """Exact 2-D DFT over Z_p[i] for planes of shape (Lw, Lh); leading axes are batched."""

    def __init__(self, length_w: int, length_h: int, p: int = DEFAULT_P):
        self.shape = (length_w, length_h)
        self.p = p
        self._cw, self._sw = _twiddles(length_w, p)
        self._ch, self._sh = _twiddles(length_h, p)
        self._inv = pow(length_w * length_h, -1, p)

    def _apply(self, xr, xi, inverse: bool):
        # X' = E_w X E_h with E = C - iS (forward) or C + iS (inverse); E is symmetric
        p = self.p
        xr = np.asarray(xr, dtype=np.int64) % p
        xi = np.asarray(xi, dtype=np.int64) % p
        sw = self._sw if inverse else (-self._sw) % p
        sh = self._sh if inverse else (-self._sh) % p
        br, bi = _cmatmul(self._cw, sw, xr, xi, p)
        cr, ci = _cmatmul_right(br, bi, self._ch, sh, p)
        if inverse:
            cr = _mulmod(cr, np.int64(self._inv), p)
            ci = _mulmod(ci, np.int64(self._inv), p)
        return cr, ci

    def forward(self, x, imag=None):
        x = np.asarray(x, dtype=np.int64)
        if x.shape[-2:] != self.shape:
            raise ValueError(f"expected planes of shape {self.shape}")
        return self._apply(x, np.zeros_like(x) if imag is None else imag, inverse=False)

    def inverse(self, real, imag):
        return self._apply(real, imag, inverse=True)

    def pointwise(self, ar, ai, br, bi):
        p = self.p
        ar, ai, br, bi = (np.asarray(v, dtype=np.int64) % p for v in (ar, ai, br, bi))
        re = (_mulmod(ar, br, p) - _mulmod(ai, bi, p)) % p
        im = (_mulmod(ar, bi, p) + _mulmod(ai, br, p)) % p
        return re, im


def _mulmod(a, b, p):
    """Elementwise a*b mod p for 31-bit operands in int64."""
    lo = (a & 0xFFFF) * b % p
    hi = (a >> 16) * b % p
    return ((hi << 16) + lo) % p
