"""Secure softmax with a bounded approximation.

Classes whose logit trails the maximum by more than an integer threshold m are dropped;
for m >= ln((10^l - 1)(K - 1)) the returned probability of the top class is within 10^-l
of the exact softmax value.  The surviving logits are renormalised to x'_k = m - (x_t - x_k)
in [0, m], shared modulo m + 1 (scaled by the logit fixed-point factor), exponentiated
locally by each party and recombined in a garbled circuit that multiplies the two
exponentials, undoes the modular wraparound and sums the terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import DEFAULT_P
from .gc.circuit import EVALUATOR, GARBLER, MAX_WIDTH, CircuitBuilder, CircuitError, CircuitGraph, WireBundle
from .layers.circuits import frag_mod_add, layer_width

DEFAULT_EXP_FRAC_BITS = 20


# ---------------------------------------------------------------------------
# threshold arithmetic


def _check_lk(l: int, K: int):
    if l < 1:
        raise ValueError("accuracy exponent l must be at least 1")
    if K < 2:
        raise ValueError("softmax needs at least two classes")


def threshold_bound(l: int, K: int) -> float:
    """ln((10^l - 1)(K - 1))."""
    _check_lk(l, K)
    return math.log((10**l - 1) * (K - 1))


def threshold_m(l: int, K: int) -> int:
    return math.ceil(threshold_bound(l, K))


def exp_integer_bits(m: float) -> int:
    """Bits of the integer part of e^m."""
    return int(math.floor(math.exp(m))).bit_length()


def exponent_bit_width(m: float, exp_frac_bits: int = DEFAULT_EXP_FRAC_BITS) -> int:
    """Word size for a fixed-point exponential bounded by e^m, with one headroom bit."""
    return exp_integer_bits(m) + exp_frac_bits + 1


@dataclass(frozen=True)
class SoftmaxConfig:
    K: int
    l: int = 4
    m: int | None = None
    exp_frac_bits: int = DEFAULT_EXP_FRAC_BITS
    logit_frac_bits: int = 16

    def __post_init__(self):
        _check_lk(self.l, self.K)
        if self.m is None:
            object.__setattr__(self, "m", threshold_m(self.l, self.K))
        if self.m < threshold_bound(self.l, self.K):
            raise ValueError(f"m={self.m} is below the bound {threshold_bound(self.l, self.K):.3f}")
        if self.exp_frac_bits < 1 or self.logit_frac_bits < 0:
            raise ValueError("fractional bit counts out of range")

    @property
    def scale(self) -> int:
        return 1 << self.logit_frac_bits

    @property
    def M(self) -> int:
        """m in logit fixed point."""
        return self.m * self.scale

    @property
    def Q(self) -> int:
        """The share modulus (m + 1) in logit fixed point."""
        return (self.m + 1) * self.scale

    @property
    def exp_width(self) -> int:
        return exponent_bit_width(self.m + 1, self.exp_frac_bits)


# ---------------------------------------------------------------------------
# oracle


@dataclass
class OracleResult:
    t: int
    p_t: float
    p_t_approx: float
    gap: float
    T0: float
    T1: float
    T2: float
    s1: int
    s2: int
    m: int


def _gap_terms(z: np.ndarray, m: float):
    """z = x - x_t <= 0 along the last axis: (T1, T2, s1, s2) relative to T0 = 1."""
    e = np.exp(z)
    drop = -z > m
    T2 = np.where(drop, e, 0).sum(axis=-1)
    T1 = np.where(drop, 0, e).sum(axis=-1) - 1.0
    s2 = drop.sum(axis=-1)
    s1 = z.shape[-1] - 1 - s2
    return T1, T2, s1, s2


def softmax_oracle(logits, l: int, m: float | None = None) -> OracleResult:
    x = np.asarray(logits, dtype=np.float64).reshape(-1)
    m = threshold_m(l, len(x)) if m is None else m
    t = int(np.argmax(x))
    T1, T2, s1, s2 = _gap_terms(x - x[t], m)
    p_t = 1.0 / (1.0 + T1 + T2)
    p_approx = 1.0 / (1.0 + T1)
    gap = T2 / ((1.0 + T1) * (1.0 + T1 + T2))
    scale = math.exp(x[t])
    return OracleResult(t, float(p_t), float(p_approx), float(gap), scale, float(T1) * scale,
                        float(T2) * scale, int(s1), int(s2), int(m) if float(m).is_integer() else m)


def softmax_gaps(logits: np.ndarray, m: float) -> np.ndarray:
    """|p_t - p_t'| for each row of a (trials, K) array."""
    x = np.asarray(logits, dtype=np.float64)
    z = x - x.max(axis=-1, keepdims=True)
    T1, T2, _, _ = _gap_terms(z, m)
    return T2 / ((1.0 + T1) * (1.0 + T1 + T2))


def verify_bound(K: int, l: int, trials: int, seed=0, low: float = -20.0, high: float = 120.0,
                 chunk: int = 2000) -> tuple[float, int]:
    """Brute-force sweep: (max gap, violations of 10^-l) over uniform random logits."""
    m = threshold_m(l, K)
    rng = np.random.default_rng(seed)
    worst, bad, done = 0.0, 0, 0
    rows = max(1, min(chunk, 2_000_000 // K))
    while done < trials:
        n = min(rows, trials - done)
        gaps = softmax_gaps(rng.uniform(low, high, (n, K)), m)
        worst = max(worst, float(gaps.max()))
        bad += int((gaps > 10.0**-l).sum())
        done += n
    return worst, bad


def renormalize_oracle(logits_fixed, cfg: SoftmaxConfig):
    """Plaintext step-3 reference on fixed-point logits: (t, x', drop flags)."""
    x = np.asarray(logits_fixed, dtype=np.int64).reshape(-1)
    t = int(np.argmax(x))
    d = x[t] - x
    drop = d > cfg.M
    return t, np.where(drop, 0, cfg.M - d), drop.astype(np.int64)


# ---------------------------------------------------------------------------
# local exponentiation


def local_exp(share, cfg: SoftmaxConfig) -> np.ndarray:
    """round(e^{share / 2^F} 2^E) for shares in [0, Q)."""
    v = np.asarray(share, dtype=np.float64) / cfg.scale
    out = np.floor(np.exp(v) * 2.0**cfg.exp_frac_bits + 0.5)
    return out.astype(object).astype(np.int64) if out.max(initial=0) < 2**62 else out.astype(object)


def probability(denominator: int, cfg: SoftmaxConfig) -> float:
    if denominator <= 0:
        raise ValueError("denominator must be positive")
    return math.exp(cfg.m) * 2.0**cfg.exp_frac_bits / denominator


# ---------------------------------------------------------------------------
# circuits


def _argmax_tree(b: CircuitBuilder, v: WireBundle, idx: WireBundle):
    """Pairwise tree over lanes; the right element wins only when strictly greater."""
    while v.simd_len > 1:
        n = v.simd_len
        half = n // 2
        left, right = list(range(0, 2 * half, 2)), list(range(1, 2 * half, 2))
        lv, rv = b.gather(v, left), b.gather(v, right)
        li, ri = b.gather(idx, left), b.gather(idx, right)
        grp = b.new_group()
        g = b.gt(rv, lv, group=grp)
        nv = b.mux(rv, lv, g, group=grp)
        ni = b.mux(ri, li, g, group=grp)
        if n % 2:
            nv = b.concat([nv, b.gather(v, [n - 1])])
            ni = b.concat([ni, b.gather(idx, [n - 1])])
        v, idx = nv, ni
    return v, idx


def _index_width(K: int) -> int:
    return max(1, (K - 1).bit_length())


def argmax_circuit(K: int, p: int = DEFAULT_P) -> CircuitGraph:
    """Oblivious argmax on logit shares; only t reaches the client."""
    w = layer_width(p)
    b = CircuitBuilder("argmax")
    xc = b.input("x_c", EVALUATOR, w, K)
    xs = b.input("x_s", GARBLER, w, K)
    v = frag_mod_add(b, xc, xs, p)
    iw = _index_width(K)
    _, t = _argmax_tree(b, v, b.const(list(range(K)), iw, K))
    b.output("t", EVALUATOR, t)
    return b.build()


def argmax_renormalize_circuit(cfg: SoftmaxConfig, p: int = DEFAULT_P) -> CircuitGraph:
    """Preprocess, argmax, renormalise and reshare modulo Q.

    Inputs: ``x_c`` (client, pre-biased share), ``x_s`` (server share), ``r_neg`` =
    (-r') mod Q and ``mask`` bits from the server.  Outputs to the client: ``t``,
    ``a`` = (x' - r') mod Q and ``flag`` = drop xor mask.
    """
    K = cfg.K
    w = layer_width(p)
    if cfg.Q >= 1 << w:
        raise CircuitError("share modulus does not fit the circuit word")
    b = CircuitBuilder("argmax_renormalize")
    xc = b.input("x_c", EVALUATOR, w, K)
    xs = b.input("x_s", GARBLER, w, K)
    rn = b.input("r_neg", GARBLER, w, K)
    mask = b.input("mask", GARBLER, 1, K)
    v = frag_mod_add(b, xc, xs, p)
    best, t = _argmax_tree(b, v, b.const(list(range(K)), _index_width(K), K))
    d = b.sub(b.broadcast(best, K), v)
    M = b.const(cfg.M, w, K)
    drop = b.gt(d, M)
    xr = b.mux(b.const(0, w, K), b.sub(M, d), drop)
    b.output("t", EVALUATOR, t)
    b.output("a", EVALUATOR, frag_mod_add(b, xr, rn, cfg.Q))
    b.output("flag", EVALUATOR, b.xor(drop, mask))
    return b.build()


@dataclass(frozen=True)
class DenominatorPlan:
    exp_width: int
    prod_width: int
    z_width: int
    corr_bits: int
    corr_const: int
    wrap_threshold: int
    sum_width: int


def denominator_plan(cfg: SoftmaxConfig) -> DenominatorPlan:
    E = cfg.exp_frac_bits
    we = cfg.exp_width
    pw = 2 * we
    zw = pw - E
    G = min(64, MAX_WIDTH - zw)
    if pw > MAX_WIDTH or G < 24 + math.ceil((cfg.m + 1) / math.log(2)):
        raise CircuitError(f"m={cfg.m} with {E} fractional bits exceeds the circuit word size")
    C = round(math.exp(-(cfg.m + 1)) * 2**G)
    thr = math.floor(math.exp(cfg.m + 0.5) * 2**E)
    sw = exponent_bit_width(cfg.m + 0.5, E) + _index_width(cfg.K) + 1
    return DenominatorPlan(we, pw, zw, G, C, thr, sw)


def denominator_circuit(cfg: SoftmaxConfig) -> CircuitGraph:
    """Sum over classes of e^{x'_k} 2^E from multiplicative shares.

    Inputs: client ``e_c`` = round(e^{a_k / 2^F} 2^E) and ``f_c`` flag shares; server ``e_s``
    = round(e^{r'_k / 2^F} 2^E) and ``f_s`` mask bits.  A product above e^{m + 1/2} 2^E can
    only come from a share sum that wrapped modulo Q and is scaled by e^{-(m+1)}.
    Output ``den`` to the client.
    """
    K, E = cfg.K, cfg.exp_frac_bits
    pl = denominator_plan(cfg)
    b = CircuitBuilder("denominator")
    ec = b.input("e_c", EVALUATOR, pl.exp_width, K)
    fc = b.input("f_c", EVALUATOR, 1, K)
    es = b.input("e_s", GARBLER, pl.exp_width, K)
    fs = b.input("f_s", GARBLER, 1, K)
    prod = b.mul(b.resize(ec, pl.prod_width), b.resize(es, pl.prod_width))
    z = b.shr(prod, E)
    wrapped = b.gt(z, b.const(pl.wrap_threshold, pl.z_width, K))
    wide = b.mul(b.resize(z, pl.z_width + pl.corr_bits), b.const(pl.corr_const, pl.z_width + pl.corr_bits, K))
    corr = b.resize(b.shr(wide, pl.corr_bits), pl.z_width)
    term = b.mux(corr, z, wrapped)
    term = b.resize(term, pl.sum_width)
    term = b.mux(b.const(0, pl.sum_width, K), term, b.xor(fc, fs))
    while term.simd_len > 1:
        n = term.simd_len
        half = n // 2
        s = b.add(b.gather(term, range(0, 2 * half, 2)), b.gather(term, range(1, 2 * half, 2)))
        term = b.concat([s, b.gather(term, [n - 1])]) if n % 2 else s
    b.output("den", EVALUATOR, term)
    return b.build()


def denominator_oracle(logits_fixed, cfg: SoftmaxConfig) -> float:
    """Exact sum over kept classes of e^{x'_k} 2^E on fixed-point logits."""
    _, xr, drop = renormalize_oracle(logits_fixed, cfg)
    vals = np.exp(xr / cfg.scale) * 2.0**cfg.exp_frac_bits
    return float(np.where(drop == 1, 0.0, vals).sum())
