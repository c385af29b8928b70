"""Encrypted frequency-domain convolution and fully connected layers.

The client transforms its share with the exact Z_p[i] DFT, packs the real and imaginary
planes channel-major into SIMD slots and encrypts them.  The server multiplies by the
transformed filters (4 plaintext multiplies, 2 ciphertext additions per filter and slot
group), subtracts the transform of a fresh uniform mask and returns the result.  The
client decrypts, sums the channel spectra, inverts the transform and keeps the output
window.  No rotations are used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import DEFAULT_P
from .._rng import Prng
from ..he.bfv import (
    HEParams, OpLog, PackedCiphertext, PlainOperand, PublicKey, SecretKey, decode_slots, decrypt,
    encode_slots, encrypt, rerandomize, simd_add_ct, simd_add_pt, simd_mul_pt,
)
from ..model import FC, Conv
from ..spectral import ModularFourier, transform_length
from .shares import CLIENT, SERVER, AdditiveShareTensor


class LayoutMismatch(ValueError):
    pass


# ---------------------------------------------------------------------------
# geometry and packing


def _axis_length(size: int, padding: str, p: int) -> int:
    if padding == "circular":
        if transform_length(size, p) != size:
            raise ValueError(f"circular convolution needs an allowed transform length, got {size}")
        return size
    if padding == "valid":
        return transform_length(size, p)
    # room for any filter up to the input size without wraparound, independent of the filter
    return transform_length(size + size // 2, p)


@dataclass(frozen=True)
class ConvGeometry:
    """Public geometry of one linear layer: input shape, transform extent and output window."""

    in_shape: tuple[int, int, int]
    out_shape: tuple[int, int, int]
    length: tuple[int, int]
    padding: str

    @classmethod
    def for_layer(cls, layer: Conv, in_shape, p: int = DEFAULT_P) -> "ConvGeometry":
        in_shape = tuple(int(v) for v in in_shape)
        _, w, h = in_shape
        length = (_axis_length(w, layer.padding, p), _axis_length(h, layer.padding, p))
        return cls(in_shape, tuple(layer.out_shape(in_shape)), length, layer.padding)

    @property
    def channels(self) -> int:
        return self.in_shape[0]

    @property
    def filters(self) -> int:
        return self.out_shape[0]

    def pad_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.int64)
        if x.shape != self.in_shape:
            raise LayoutMismatch(f"expected input {self.in_shape}, got {x.shape}")
        out = np.zeros((self.channels, *self.length), dtype=np.int64)
        out[:, : x.shape[1], : x.shape[2]] = x
        return out

    def filter_planes(self, layer: Conv, p: int = DEFAULT_P) -> np.ndarray:
        """(k, c, Lw, Lh): tap (a, b) lands at ((P_w - a) mod L_w, (P_h - b) mod L_h).

        Circular convolution with this plane is cross-correlation with offset P, so the
        output needs no shift and the window starts at the origin.
        """
        k, c, fw, fh = layer.weights.shape
        pw, ph = layer.offsets()
        lw, lh = self.length
        planes = np.zeros((k, c, lw, lh), dtype=np.int64)
        rows = (pw - np.arange(fw)) % lw
        cols = (ph - np.arange(fh)) % lh
        planes[:, :, rows[:, None], cols[None, :]] = np.asarray(layer.weights, dtype=np.int64) % p
        return planes

    def window(self, full: np.ndarray) -> np.ndarray:
        _, ow, oh = self.out_shape
        return full[..., :ow, :oh]


@dataclass(frozen=True)
class PackingLayout:
    """Channel-major, row-major within a channel; unused slots are zero."""

    channels: int
    length: tuple[int, int]
    n: int

    @property
    def plane(self) -> int:
        return self.length[0] * self.length[1]

    @property
    def groups(self) -> int:
        return math.ceil(self.channels * self.plane / self.n)

    @property
    def ciphertexts(self) -> int:
        return 2 * self.groups

    def pack(self, planes: np.ndarray) -> np.ndarray:
        planes = np.asarray(planes, dtype=np.int64)
        if planes.shape[-3:] != (self.channels, *self.length):
            raise LayoutMismatch(f"expected planes {(self.channels, *self.length)}, got {planes.shape}")
        lead = planes.shape[:-3]
        flat = planes.reshape(*lead, -1)
        out = np.zeros((*lead, self.groups * self.n), dtype=np.int64)
        out[..., : flat.shape[-1]] = flat
        return out.reshape(*lead, self.groups, self.n)

    def unpack(self, slots: np.ndarray) -> np.ndarray:
        slots = np.asarray(slots, dtype=np.int64)
        lead = slots.shape[:-2]
        flat = slots.reshape(*lead, -1)[..., : self.channels * self.plane]
        return flat.reshape(*lead, self.channels, *self.length)

    def describe(self) -> dict:
        return {"channels": self.channels, "length": list(self.length), "n": self.n}


def layout_for(geom: ConvGeometry, n: int) -> PackingLayout:
    return PackingLayout(geom.channels, geom.length, n)


def input_ciphertext_count(shape, n: int) -> int:
    c, w, h = shape
    return 2 * math.ceil(w * h * c / n)


@dataclass
class EncryptedFreqTensor:
    layout: PackingLayout
    real: list[PackedCiphertext]
    imag: list[PackedCiphertext]

    def __post_init__(self):
        if len(self.real) != self.layout.groups or len(self.imag) != self.layout.groups:
            raise LayoutMismatch("ciphertext count does not match the packing layout")

    @property
    def ciphertexts(self) -> list[PackedCiphertext]:
        return self.real + self.imag

    @classmethod
    def from_list(cls, layout: PackingLayout, cts) -> "EncryptedFreqTensor":
        g = layout.groups
        if len(cts) != 2 * g:
            raise LayoutMismatch("ciphertext count does not match the packing layout")
        return cls(layout, list(cts[:g]), list(cts[g:]))


@dataclass
class MaskRecord:
    """Server-only mask of one layer output; r is uniform over Z_p, fft_r its spectrum."""

    r: np.ndarray
    fft_r: tuple[np.ndarray, np.ndarray]


@dataclass
class ServerContext:
    params: HEParams
    pk: PublicKey
    rng: Prng
    log: OpLog = field(default_factory=OpLog)
    rerandomize: bool = True

    @property
    def p(self) -> int:
        return self.params.p

    def fourier(self, length) -> ModularFourier:
        return _fourier(tuple(length), self.p)


_FOURIER: dict = {}


def _fourier(length, p) -> ModularFourier:
    key = (length, p)
    if key not in _FOURIER:
        _FOURIER[key] = ModularFourier(length[0], length[1], p)
    return _FOURIER[key]


# ---------------------------------------------------------------------------
# ciphertext <-> share translation


def encrypt_planes(real, imag, layout: PackingLayout, params: HEParams, pk: PublicKey, rng: Prng | None = None):
    pr, pi = layout.pack(real), layout.pack(imag)
    return EncryptedFreqTensor(
        layout,
        [encrypt(encode_slots(v, params), pk, rng) for v in pr],
        [encrypt(encode_slots(v, params), pk, rng) for v in pi],
    )


def encrypt_share(x_share, geom: ConvGeometry, params: HEParams, pk: PublicKey, rng: Prng | None = None) -> EncryptedFreqTensor:
    """Client: transform and encrypt its (padded) share."""
    fr, fi = _fourier(geom.length, params.p).forward(geom.pad_input(np.asarray(x_share) % params.p))
    return encrypt_planes(fr, fi, layout_for(geom, params.n), params, pk, rng)


def add_share(ct: EncryptedFreqTensor, s_share, geom: ConvGeometry, ctx: ServerContext) -> EncryptedFreqTensor:
    """Server: homomorphically add the transform of its share."""
    fr, fi = ctx.fourier(geom.length).forward(geom.pad_input(np.asarray(s_share) % ctx.p))
    pr, pi = ct.layout.pack(fr), ct.layout.pack(fi)
    return EncryptedFreqTensor(
        ct.layout,
        [simd_add_pt(c, PlainOperand(v, ctx.params), ctx.log) for c, v in zip(ct.real, pr)],
        [simd_add_pt(c, PlainOperand(v, ctx.params), ctx.log) for c, v in zip(ct.imag, pi)],
    )


def ct_from_shares(client_share: AdditiveShareTensor, server_share: AdditiveShareTensor, geom: ConvGeometry,
                   params: HEParams, pk: PublicKey, ctx: ServerContext | None = None, rng: Prng | None = None) -> EncryptedFreqTensor:
    """Encrypted spectrum of (x^C + x^S) mod p."""
    if client_share.shape != server_share.shape:
        raise LayoutMismatch("shares have different shapes")
    ctx = ctx or ServerContext(params, pk, rng or Prng(None, "server"))
    return add_share(encrypt_share(client_share.data, geom, params, pk, rng), server_share.data, geom, ctx)


def _mask_planes(ctx: ServerContext, channels: int, length) -> MaskRecord:
    r = ctx.rng.uniform(ctx.p, (channels, *length))
    return MaskRecord(r, ctx.fourier(length).forward(r))


def _apply_mask(ctx: ServerContext, ct: EncryptedFreqTensor, mask: MaskRecord) -> EncryptedFreqTensor:
    p = ctx.p
    mr, mi = ct.layout.pack((-mask.fft_r[0]) % p), ct.layout.pack((-mask.fft_r[1]) % p)
    out_r, out_i = [], []
    for c, m in zip(ct.real, mr):
        c = simd_add_pt(c, PlainOperand(m, ctx.params), ctx.log)
        out_r.append(rerandomize(c, ctx.pk, ctx.rng) if ctx.rerandomize else c)
    for c, m in zip(ct.imag, mi):
        c = simd_add_pt(c, PlainOperand(m, ctx.params), ctx.log)
        out_i.append(rerandomize(c, ctx.pk, ctx.rng) if ctx.rerandomize else c)
    return EncryptedFreqTensor(ct.layout, out_r, out_i)


def new_mask(ctx: ServerContext, layout: PackingLayout) -> MaskRecord:
    return _mask_planes(ctx, layout.channels, layout.length)


def mask_ct(ct: EncryptedFreqTensor, ctx: ServerContext, zero_mask: bool = False,
            mask: MaskRecord | None = None) -> tuple[EncryptedFreqTensor, MaskRecord]:
    """Server: subtract the spectrum of a uniform r (per channel plane), fresh unless given."""
    lay = ct.layout
    if mask is None and zero_mask:
        z = np.zeros((lay.channels, *lay.length), dtype=np.int64)
        mask = MaskRecord(z, (z, z))
    elif mask is None:
        mask = new_mask(ctx, lay)
    return _apply_mask(ctx, ct, mask), mask


def decrypt_planes(ct: EncryptedFreqTensor, sk: SecretKey) -> tuple[np.ndarray, np.ndarray]:
    re = np.stack([decode_slots(decrypt(c, sk)) for c in ct.real])
    im = np.stack([decode_slots(decrypt(c, sk)) for c in ct.imag])
    return ct.layout.unpack(re), ct.layout.unpack(im)


def client_decode(ct: EncryptedFreqTensor, sk: SecretKey, sum_channels: bool = False) -> np.ndarray:
    """Client: decrypt, optionally sum channel spectra, invert the transform.  Full plane(s)."""
    p = sk.params.p
    re, im = decrypt_planes(ct, sk)
    if sum_channels:
        re, im = re.sum(axis=0) % p, im.sum(axis=0) % p
    out_r, _ = _fourier(ct.layout.length, p).inverse(re, im)
    return out_r


def shares_from_ct(ct: EncryptedFreqTensor, ctx: ServerContext, sk: SecretKey, zero_mask: bool = False):
    """Mask a ciphertext of a tensor's spectrum and split it into (client, server) shares.

    Returns the shares of the full transform planes (channels, L_w, L_h).
    """
    masked, mask = mask_ct(ct, ctx, zero_mask)
    client = client_decode(masked, sk)
    return AdditiveShareTensor(client, CLIENT, ctx.p), AdditiveShareTensor(mask.r, SERVER, ctx.p)


# ---------------------------------------------------------------------------
# server-side convolution


@dataclass
class PreparedFilters:
    """Transformed filters packed per slot group: F(f)_R, F(f)_I and -F(f)_I as plaintexts."""

    geom: ConvGeometry
    layout: PackingLayout
    fr: list[list[PlainOperand]]
    fi: list[list[PlainOperand]]
    nfi: list[list[PlainOperand]]
    bias: np.ndarray

    @property
    def filters(self) -> int:
        return len(self.fr)


def prepare_filters(layer: Conv, geom: ConvGeometry, params: HEParams) -> PreparedFilters:
    p = params.p
    k = layer.filters
    planes = geom.filter_planes(layer, p)
    fr, fi = _fourier(geom.length, p).forward(planes)
    lay = layout_for(geom, params.n)
    pr, pi, pn = lay.pack(fr), lay.pack(fi), lay.pack((-fi) % p)
    ops = lambda a: [[PlainOperand(a[j, g], params) for g in range(lay.groups)] for j in range(k)]
    return PreparedFilters(geom, lay, ops(pr), ops(pi), ops(pn), np.asarray(layer.bias, dtype=np.int64))


def _filter_product(ct: EncryptedFreqTensor, pf: PreparedFilters, j: int, log: OpLog) -> EncryptedFreqTensor:
    out_r, out_i = [], []
    for g in range(ct.layout.groups):
        xr, xi = ct.real[g], ct.imag[g]
        out_r.append(simd_add_ct(simd_mul_pt(xr, pf.fr[j][g], log), simd_mul_pt(xi, pf.nfi[j][g], log), log))
        out_i.append(simd_add_ct(simd_mul_pt(xr, pf.fi[j][g], log), simd_mul_pt(xi, pf.fr[j][g], log), log))
    return EncryptedFreqTensor(ct.layout, out_r, out_i)


def secure_conv_general(ct: EncryptedFreqTensor, pf: PreparedFilters, ctx: ServerContext,
                        zero_mask: bool = False, masks: list[MaskRecord] | None = None,
                        ) -> tuple[list[EncryptedFreqTensor], AdditiveShareTensor]:
    """Server: per filter, multiply, mask and return the intermediates plus the server's share.

    The server's share of output j is the window of sum_c r_jc plus the bias b_j.  Masks
    may be generated ahead of time with :func:`new_mask`, one per filter.
    """
    if ct.layout != pf.layout:
        raise LayoutMismatch("ciphertext packing does not match the layer")
    if masks is not None and len(masks) != pf.filters:
        raise LayoutMismatch("one mask per filter is required")
    p = ctx.p
    outs, shares = [], []
    for j in range(pf.filters):
        given = masks[j] if masks is not None else None
        masked, mask = mask_ct(_filter_product(ct, pf, j, ctx.log), ctx, zero_mask, given)
        outs.append(masked)
        shares.append(pf.geom.window(mask.r.sum(axis=0) % p))
    s = (np.stack(shares) + pf.bias[:, None, None]) % p
    return outs, AdditiveShareTensor(s, SERVER, p)


def secure_conv_simple(ct: EncryptedFreqTensor, filter_plane, ctx: ServerContext,
                       zero_mask: bool = False) -> tuple[EncryptedFreqTensor, MaskRecord]:
    """Single channel, single filter plane already laid out on the transform grid."""
    lay = ct.layout
    plane = np.asarray(filter_plane, dtype=np.int64) % ctx.p
    if lay.channels != 1 or plane.shape != lay.length:
        raise LayoutMismatch(f"filter plane must be {lay.length} for a one-channel input")
    fr, fi = ctx.fourier(lay.length).forward(plane[None])
    pr, pi, pn = lay.pack(fr), lay.pack(fi), lay.pack((-fi) % ctx.p)
    op = lambda a: [[PlainOperand(a[g], ctx.params) for g in range(lay.groups)]]
    geom = ConvGeometry((1, *lay.length), (1, *lay.length), lay.length, "circular")
    pf = PreparedFilters(geom, lay, op(pr), op(pi), op(pn), np.zeros(1, dtype=np.int64))
    return mask_ct(_filter_product(ct, pf, 0, ctx.log), ctx, zero_mask)


def client_conv_output(outs: list[EncryptedFreqTensor], geom: ConvGeometry, sk: SecretKey) -> AdditiveShareTensor:
    """Client: decode each filter's intermediates into its share of the output window."""
    p = sk.params.p
    planes = [geom.window(client_decode(o, sk, sum_channels=True)) for o in outs]
    return AdditiveShareTensor(np.stack(planes), CLIENT, p)


# ---------------------------------------------------------------------------
# fully connected layers


def fc_to_conv(fc: FC, in_shape) -> Conv:
    """l_o filters covering the whole input; the output is (l_o, 1, 1)."""
    c, w, h = (int(v) for v in in_shape)
    lo, li = fc.weights.shape
    if li != c * w * h:
        raise ValueError(f"FC expects {li} inputs, incoming shape {in_shape} has {c * w * h}")
    return Conv(np.asarray(fc.weights).reshape(lo, c, w, h), np.asarray(fc.bias), "valid")


def as_conv(layer, in_shape) -> Conv:
    return fc_to_conv(layer, in_shape) if isinstance(layer, FC) else layer


def secure_linear_inprocess(layer, x_client: AdditiveShareTensor, x_server: AdditiveShareTensor | None,
                            params: HEParams, keys, ctx: ServerContext, rng: Prng | None = None):
    """Run one linear layer with both roles in one process (tests and diagnostics)."""
    conv = as_conv(layer, x_client.shape)
    geom = ConvGeometry.for_layer(conv, x_client.shape, params.p)
    ct = encrypt_share(x_client.data, geom, params, keys.public, rng)
    if x_server is not None:
        ct = add_share(ct, x_server.data, geom, ctx)
    outs, s_share = secure_conv_general(ct, prepare_filters(conv, geom, params), ctx)
    return client_conv_output(outs, geom, keys.secret), s_share
