"""Signed fixed-point encoding into Z_p."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import DEFAULT_FRAC_BITS, DEFAULT_P


class FixedPointOverflow(OverflowError):
    pass


def round_half_away(x):
    """Round half away from zero; works on scalars and arrays."""
    x = np.asarray(x, dtype=np.float64)
    out = np.sign(x) * np.floor(np.abs(x) + 0.5)
    return out if out.ndim else float(out)


def round_div(a, shift: int):
    """Integer a / 2^shift rounded half away from zero (exact, arrays of int64 or object)."""
    if shift == 0:
        return a
    a = np.asarray(a)
    half = 1 << (shift - 1)
    mag = (np.abs(a) + half) >> shift
    return np.where(a < 0, -mag, mag)


def floor_div_pow2(a, shift: int):
    return np.asarray(a) >> shift


@dataclass(frozen=True)
class FixedPointConfig:
    frac_bits: int = DEFAULT_FRAC_BITS
    p: int = DEFAULT_P

    def __post_init__(self):
        if self.frac_bits < 0:
            raise ValueError("frac_bits must be non-negative")
        if self.p < 3 or self.p % 2 == 0:
            raise ValueError("p must be an odd modulus")

    @property
    def half(self) -> int:
        return self.p // 2

    @property
    def scale(self) -> int:
        return 1 << self.frac_bits

    def check_batching(self, n: int) -> None:
        if (self.p - 1) % (2 * n):
            raise ValueError(f"p must be 1 mod 2n for n={n}")


def encode_signed(v: float, cfg: FixedPointConfig) -> int:
    scaled = int(round_half_away(float(v) * cfg.scale))
    if abs(scaled) >= cfg.half:
        raise FixedPointOverflow(f"{v} does not fit at {cfg.frac_bits} fractional bits mod {cfg.p}")
    return scaled % cfg.p


def decode_signed(x: int, cfg: FixedPointConfig) -> float:
    x = int(x) % cfg.p
    if x > cfg.half:
        x -= cfg.p
    return x / cfg.scale


def to_signed(x, p: int):
    """Map residues in [0, p) to the centered range (-p/2, p/2]."""
    x = np.asarray(x, dtype=np.int64) % p
    return np.where(x > p // 2, x - p, x)


def to_residue(x, p: int):
    return np.asarray(x, dtype=np.int64) % p


def quantize_array(values: np.ndarray, frac_bits: int, limit: int | None = None) -> np.ndarray:
    """Float array to signed integers at 2^frac_bits."""
    q = round_half_away(np.asarray(values, dtype=np.float64) * (1 << frac_bits)).astype(np.int64)
    if limit is not None and q.size and int(np.abs(q).max()) >= limit:
        raise FixedPointOverflow("quantized value out of range")
    return q


def encode_array(values, cfg: FixedPointConfig) -> np.ndarray:
    return to_residue(quantize_array(values, cfg.frac_bits, cfg.half), cfg.p)


def decode_array(x, cfg: FixedPointConfig) -> np.ndarray:
    return to_signed(x, cfg.p) / cfg.scale
