"""Additive secret shares over Z_p and the local share operations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import DEFAULT_P
from .._rng import Prng

CLIENT, SERVER = "client", "server"


class ShareError(ValueError):
    pass


@dataclass
class AdditiveShareTensor:
    """One party's share; client share + server share = tensor (mod p), elementwise."""

    data: np.ndarray
    role: str
    p: int = DEFAULT_P

    def __post_init__(self):
        if self.role not in (CLIENT, SERVER):
            raise ShareError(f"role must be {CLIENT!r} or {SERVER!r}")
        self.data = np.asarray(self.data, dtype=np.int64) % self.p

    @property
    def shape(self):
        return self.data.shape

    def signed(self) -> np.ndarray:
        return np.where(self.data > self.p // 2, self.data - self.p, self.data)


def share(x, rng: Prng, p: int = DEFAULT_P) -> tuple[AdditiveShareTensor, AdditiveShareTensor]:
    """Split x into (client, server) shares with a uniform server share."""
    x = np.asarray(x, dtype=np.int64)
    r = rng.uniform(p, x.shape)
    return AdditiveShareTensor((x - r) % p, CLIENT, p), AdditiveShareTensor(r, SERVER, p)


def reconstruct(a: AdditiveShareTensor, b: AdditiveShareTensor, signed: bool = True) -> np.ndarray:
    if a.p != b.p or a.shape != b.shape:
        raise ShareError("shares disagree on modulus or shape")
    if a.role == b.role:
        raise ShareError("need one client and one server share")
    v = (a.data + b.data) % a.p
    return np.where(v > a.p // 2, v - a.p, v) if signed else v


def rescale_shares(s: AdditiveShareTensor, frac_bits: int) -> AdditiveShareTensor:
    """Local floor division of a share by 2^frac_bits in signed representation.

    The reconstruction is off by at most one unit unless the two signed shares sum outside
    (-p/2, p/2], which for a uniform mask happens with probability about |x|/p and then
    produces an error near p / 2^frac_bits.  The pipeline therefore rescales inside the
    garbled block instead; this helper is kept for analysis.
    """
    return AdditiveShareTensor(s.signed() >> frac_bits, s.role, s.p)


def mean_pool_local(s: AdditiveShareTensor, k: int, stride: int | None = None) -> AdditiveShareTensor:
    """Each party floors the mean of its own signed share over k x k regions of (c, w, h)."""
    stride = stride or k
    if stride != k:
        raise ShareError("local mean pooling needs non-overlapping regions")
    if s.data.ndim != 3:
        raise ShareError("expected a (c, w, h) share")
    c, w, h = s.shape
    if w % k or h % k:
        raise ShareError(f"{k}x{k} regions do not tile {w}x{h}")
    v = s.signed().reshape(c, w // k, k, h // k, k)
    return AdditiveShareTensor(v.sum(axis=(2, 4)) // (k * k), s.role, s.p)


def mean_pool_local_1d(s: AdditiveShareTensor, k: int) -> AdditiveShareTensor:
    """Floor mean over consecutive groups of k elements of a flat share."""
    v = s.signed().reshape(-1)
    if v.size % k:
        raise ShareError(f"regions of {k} do not tile {v.size} elements")
    return AdditiveShareTensor(v.reshape(-1, k).sum(axis=1) // k, s.role, s.p)
