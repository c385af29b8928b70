"""Garbled circuits for the non-linear layers.

Values travel between layers as additive shares mod p.  Inside a circuit a signed value y
is carried as the unsigned word y + O for a public offset O, which makes unsigned
comparison agree with signed order.  The client adds floor(p/2) to its share before
preprocessing, so the biased form costs nothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import DEFAULT_FRAC_BITS, DEFAULT_P
from ..gc.circuit import (
    EVALUATOR, GARBLER, CircuitBuilder, CircuitError, CircuitGraph, Cost, WireBundle, simd_cost,
)


def layer_width(p: int = DEFAULT_P) -> int:
    """Word size for share arithmetic: a sum of two residues must fit."""
    return p.bit_length() + 1


def bias_share(share, p: int = DEFAULT_P):
    """The client's share shifted so that preprocessing yields the biased value."""
    return (np.asarray(share, dtype=np.int64) + p // 2) % p


def unbias(value, p: int = DEFAULT_P):
    """Biased word back to the signed integer it carries."""
    return np.asarray(value, dtype=np.int64) - p // 2


def rescale_offset(p: int, frac_bits: int) -> int:
    """Smallest multiple of 2^frac_bits that is at least floor(p/2)."""
    step = 1 << frac_bits
    return -(-(p // 2) // step) * step


# ---------------------------------------------------------------------------
# fragments


def frag_mod_add(b: CircuitBuilder, x: WireBundle, y: WireBundle, modulus: int) -> WireBundle:
    """(x + y) mod modulus for x, y in [0, modulus): ADD, GT, SUB, MUX."""
    n, w = x.simd_len, x.bit_width
    s = b.add(x, y)
    wrap = b.gt(s, b.const(modulus - 1, w, n))
    d = b.sub(s, b.const(modulus, w, n))
    return b.mux(d, s, wrap)


def frag_relu(b: CircuitBuilder, x: WireBundle, offset: int) -> WireBundle:
    """max(x, offset): with offset 0 on residues this is the unsigned pass-through variant."""
    o = b.const(offset, x.bit_width, x.simd_len)
    return b.mux(x, o, b.gt(x, o))


def frag_max(b: CircuitBuilder, parts: list[WireBundle]) -> WireBundle:
    """Running maximum; each compare-select round is one SIMD unit."""
    best = parts[0]
    for q in parts[1:]:
        grp = b.new_group()
        best = b.mux(q, best, b.gt(q, best, group=grp), group=grp)
    return best


def frag_mean(b: CircuitBuilder, parts: list[WireBundle]) -> WireBundle:
    """floor(sum / k) for k a power of two; an offset carried by every part is preserved."""
    k = len(parts)
    if k & (k - 1):
        raise CircuitError("mean pooling needs a power-of-two region size")
    extra = k.bit_length() - 1
    w = parts[0].bit_width
    acc = b.resize(parts[0], w + extra)
    for q in parts[1:]:
        acc = b.add(acc, b.resize(q, w + extra))
    return b.resize(b.shr(acc, extra), w) if extra else acc


def _regions(n: int, k: int, regions) -> np.ndarray:
    if regions is None:
        if k < 1 or n % k:
            raise CircuitError(f"k={k} does not divide N={n}")
        return np.arange(n).reshape(-1, k)
    regions = np.asarray(regions, dtype=np.int64)
    if regions.ndim != 2 or regions.shape[1] != k or regions.size != n:
        raise CircuitError("regions must tile the input")
    return regions


# ---------------------------------------------------------------------------
# stand-alone layer circuits


def preprocess_shares_circuit(N: int, p: int = DEFAULT_P, width: int | None = None) -> CircuitGraph:
    """x = (x_C + x_S) mod p.

    The comparison is against p - 1 and the MUX selects the difference on wrap; the
    printed form compares against p and swaps the MUX operands, which maps x_C + x_S = p
    to p and every wrapped sum to the unreduced value.
    """
    width = width or layer_width(p)
    if width < p.bit_length() + 1:
        raise CircuitError("bit width must exceed log2 p by one")
    b = CircuitBuilder("preprocess")
    xc = b.input("x_c", EVALUATOR, width, N)
    xs = b.input("x_s", GARBLER, width, N)
    b.output("x", EVALUATOR, frag_mod_add(b, xc, xs, p))
    return b.build()


def relu_circuit(N: int, p: int = DEFAULT_P) -> CircuitGraph:
    """Residues above floor(p/2) are negative and become 0: MUX(0, x, GT(x, floor(p/2)))."""
    w = layer_width(p)
    b = CircuitBuilder("relu")
    x = b.input("x", EVALUATOR, w, N)
    neg = b.gt(x, b.const(p // 2, w, N))
    b.output("y", EVALUATOR, b.mux(b.const(0, w, N), x, neg))
    return b.build()


def maxpool_circuit(N: int, k: int, p: int = DEFAULT_P, regions=None) -> CircuitGraph:
    regions = _regions(N, k, regions)
    b = CircuitBuilder("maxpool")
    x = b.input("x", EVALUATOR, layer_width(p), N)
    b.output("y", EVALUATOR, frag_max(b, b.subset(x, regions)))
    return b.build()


def fused_maxpool_relu_circuit(N: int, k: int, p: int = DEFAULT_P, regions=None) -> CircuitGraph:
    """ReLU(max(region)) on biased words (x + floor(p/2)) mod p; the output is biased too."""
    regions = _regions(N, k, regions)
    b = CircuitBuilder("fused_maxpool_relu")
    x = b.input("x", EVALUATOR, layer_width(p), N)
    b.output("y", EVALUATOR, frag_relu(b, frag_max(b, b.subset(x, regions)), p // 2))
    return b.build()


def meanpool_circuit(N: int, k: int, p: int = DEFAULT_P, regions=None) -> CircuitGraph:
    """floor(mean(region)) on biased words; output biased."""
    regions = _regions(N, k, regions)
    b = CircuitBuilder("meanpool")
    x = b.input("x", EVALUATOR, layer_width(p), N)
    b.output("y", EVALUATOR, frag_mean(b, b.subset(x, regions)))
    return b.build()


def output_reshare_circuit(N: int, p: int = DEFAULT_P) -> CircuitGraph:
    """Client receives (y - r) mod p; the server feeds (-r mod p)."""
    w = layer_width(p)
    b = CircuitBuilder("reshare")
    y = b.input("y", EVALUATOR, w, N)
    rn = b.input("r_neg", GARBLER, w, N)
    b.output("y_c", EVALUATOR, frag_mod_add(b, y, rn, p))
    return b.build()


# ---------------------------------------------------------------------------
# pipeline blocks


@dataclass(frozen=True)
class PoolStage:
    kind: str  # "relu" | "maxpool" | "fused" | "meanpool"
    regions: tuple = ()

    @property
    def k(self) -> int:
        return len(self.regions[0]) if self.regions else 1


def block_circuit(N: int, stages, p: int = DEFAULT_P, frac_bits: int = DEFAULT_FRAC_BITS,
                  name: str = "block") -> CircuitGraph:
    """One garbled block between two linear layers.

    preprocess -> rescale by 2^frac_bits -> stages -> reshare.  Inputs: client share
    ``x_c`` (pre-biased), server share ``x_s``, server mask ``r_neg`` = (-r - O) mod p
    where O = rescale_offset(p, frac_bits) >> frac_bits.  Output ``y_c`` to the client.
    """
    w = layer_width(p)
    b = CircuitBuilder(name)
    xc = b.input("x_c", EVALUATOR, w, N)
    xs = b.input("x_s", GARBLER, w, N)
    v = frag_mod_add(b, xc, xs, p)
    big = rescale_offset(p, frac_bits)
    v = b.add(v, b.const(big - p // 2, w, N))
    if frac_bits:
        v = b.shr(v, frac_bits)
    offset = big >> frac_bits
    for st in stages:
        if st.kind == "relu":
            v = frag_relu(b, v, offset)
            continue
        regions = np.asarray(st.regions, dtype=np.int64)
        parts = b.subset(v, regions)
        if st.kind == "maxpool":
            v = frag_max(b, parts)
        elif st.kind == "fused":
            v = frag_relu(b, frag_max(b, parts), offset)
        elif st.kind == "meanpool":
            v = frag_mean(b, parts)
        else:
            raise CircuitError(f"unknown stage {st.kind!r}")
    rn = b.input("r_neg", GARBLER, w, v.simd_len)
    b.output("y_c", EVALUATOR, frag_mod_add(b, b.resize(v, w), rn, p))
    return b.build()


def block_mask_input(r, p: int = DEFAULT_P, frac_bits: int = DEFAULT_FRAC_BITS):
    """Server's circuit input for a fresh output share r."""
    offset = rescale_offset(p, frac_bits) >> frac_bits
    return (-np.asarray(r, dtype=np.int64) - offset) % p


# ---------------------------------------------------------------------------
# symbolic costs


def preprocessing_cost(N: int) -> Cost:
    return simd_cost((4, N))


def relu_cost(N: int) -> Cost:
    return simd_cost((2, N))


def maxpool_cost(N: int, k: int) -> Cost:
    return simd_cost((k - 1, N // k), subset=1)


def fused_cost(N: int, k: int) -> Cost:
    return simd_cost((k + 1, N // k), subset=1)


def meanpool_cost(N: int, k: int) -> Cost:
    return simd_cost((k - 1, N // k), subset=1)


def fused_savings(N: int, k: int) -> Cost:
    """relu + maxpool minus fused: 2 SIMD(N) - 2 SIMD(N/k)."""
    return (relu_cost(N) + maxpool_cost(N, k)) - fused_cost(N, k)


def relu_reduction(k: int) -> float:
    """Share of ReLU lane evaluations removed by pooling first."""
    return 1 - 1 / k


def layer_cost(spec, N: int) -> Cost:
    from ..model import FC, Conv, FusedMaxPoolReLU, MaxPool, MeanPool, ReLU, Softmax

    if isinstance(spec, ReLU):
        return relu_cost(N)
    if isinstance(spec, FusedMaxPoolReLU):
        return fused_cost(N, spec.region)
    if isinstance(spec, MaxPool):
        return maxpool_cost(N, spec.region)
    if isinstance(spec, MeanPool):
        return meanpool_cost(N, spec.region)
    if isinstance(spec, (Conv, FC, Softmax)):
        return Cost()
    raise TypeError(f"unknown layer {spec!r}")
