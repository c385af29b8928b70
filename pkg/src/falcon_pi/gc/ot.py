"""1-out-of-2 oblivious transfer of 128-bit labels.

``base_ot``: Bellare-Micali style over the 2048-bit MODP group (RFC 3526 group 14).
The sender publishes a random group element C whose discrete log nobody knows, and
A = g^a.  For each choice bit the receiver sends h0 with h0 * h1 = C, knowing the
discrete log of h_b only; pads are H(i, j, h_j^a).  One sender exponentiation per
transfer since h1^a = C^a / h0^a.

``iknp``: 128 base transfers with the roles swapped, then the IKNP extension (semi-honest)
for any number of transfers at the cost of PRG expansion and a fixed-key AES hash per row.
The base transfers run once per channel and direction; each later extension expands the
same seeds under a fresh index.

``insecure_dealer``: the sender simply ships both labels; for fast deterministic tests only.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import gmpy2
import numpy as np

from .._rng import Prng
from ..runtime.framing import Channel, FrameType, ProtocolError

MODP_2048 = int(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74020BBEA63B139B22514A08798E3404DD"
    "EF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F"
    "83655D23DCA3AD961C62F356208552BB9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B"
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF6955817183995497CEA956AE515D2261898FA0510"
    "15728E5A8AACAA68FFFFFFFFFFFFFFFF",
    16,
)
GENERATOR = 2
ELEM = 256
EXP_BITS = 256
MODES = ("iknp", "base_ot", "insecure_dealer")
KAPPA = 128


class OTError(ProtocolError):
    pass


@dataclass(frozen=True)
class ObliviousTransferConfig:
    mode: str = "iknp"
    unsafe: bool = False
    label_bits: int = 128

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown OT mode {self.mode!r}")
        if self.mode == "insecure_dealer" and not self.unsafe:
            raise ValueError("insecure_dealer leaks every label; pass unsafe=True to use it")
        if self.label_bits != 128:
            raise ValueError("labels are 128 bits")


def _enc(x) -> bytes:
    return int(x).to_bytes(ELEM, "big")


def _dec(raw: bytes) -> gmpy2.mpz:
    v = gmpy2.mpz(int.from_bytes(raw, "big"))
    if not 1 < v < MODP_2048 - 1:
        raise OTError("group element out of range")
    return v


def _pad(i: int, j: int, elem) -> np.ndarray:
    d = hashlib.sha256(i.to_bytes(8, "little") + bytes([j]) + _enc(elem)).digest()[:16]
    return np.frombuffer(d, dtype="<u8")


def ot_send(ch: Channel, m0: np.ndarray, m1: np.ndarray, cfg: ObliviousTransferConfig, rng: Prng) -> None:
    m0 = np.asarray(m0, dtype=np.uint64).reshape(-1, 2)
    m1 = np.asarray(m1, dtype=np.uint64).reshape(-1, 2)
    if cfg.mode == "insecure_dealer":
        ch.send(FrameType.OT_MSG, m0.astype("<u8").tobytes() + m1.astype("<u8").tobytes())
    elif cfg.mode == "iknp":
        _ext_send(ch, m0, m1, rng)
    else:
        _base_send(ch, m0, m1, rng)


def ot_receive(ch: Channel, choices, cfg: ObliviousTransferConfig, rng: Prng) -> np.ndarray:
    choices = np.asarray(choices, dtype=np.uint8).reshape(-1)
    count = len(choices)
    if cfg.mode == "insecure_dealer":
        raw = ch.recv(FrameType.OT_MSG)
        if len(raw) != count * 32:
            raise OTError("unexpected dealer message size")
        both = np.frombuffer(raw, dtype="<u8").reshape(2, count, 2)
        return both[choices, np.arange(count)].astype(np.uint64)
    if cfg.mode == "iknp":
        return _ext_receive(ch, choices, rng)
    return _base_receive(ch, choices, rng)


def _base_send(ch: Channel, m0: np.ndarray, m1: np.ndarray, rng: Prng) -> None:
    count = len(m0)
    P, g = gmpy2.mpz(MODP_2048), gmpy2.mpz(GENERATOR)
    c = gmpy2.powmod(g, gmpy2.mpz(rng.randint(EXP_BITS)), P)
    a = gmpy2.mpz(rng.randint(EXP_BITS)) | 1
    A = gmpy2.powmod(g, a, P)
    ch.send(FrameType.OT_MSG, _enc(c) + _enc(A))
    raw = ch.recv(FrameType.OT_MSG)
    if len(raw) != count * ELEM:
        raise OTError("unexpected OT response size")
    ca = gmpy2.powmod(c, a, P)
    out = np.empty((count, 2, 2), dtype=np.uint64)
    for i in range(count):
        h0 = _dec(raw[i * ELEM:(i + 1) * ELEM])
        k0 = gmpy2.powmod(h0, a, P)
        k1 = ca * gmpy2.invert(k0, P) % P
        out[i, 0] = m0[i] ^ _pad(i, 0, k0)
        out[i, 1] = m1[i] ^ _pad(i, 1, k1)
    ch.send(FrameType.OT_MSG, out.astype("<u8").tobytes())


def _base_receive(ch: Channel, choices: np.ndarray, rng: Prng) -> np.ndarray:
    count = len(choices)
    P, g = gmpy2.mpz(MODP_2048), gmpy2.mpz(GENERATOR)
    first = ch.recv(FrameType.OT_MSG)
    if len(first) != 2 * ELEM:
        raise OTError("malformed OT setup message")
    c, A = _dec(first[:ELEM]), _dec(first[ELEM:])
    secrets, msg = [], []
    for i in range(count):
        x = gmpy2.mpz(rng.randint(EXP_BITS)) | 1
        hb = gmpy2.powmod(g, x, P)
        h0 = hb if choices[i] == 0 else c * gmpy2.invert(hb, P) % P
        secrets.append(x)
        msg.append(_enc(h0))
    ch.send(FrameType.OT_MSG, b"".join(msg))
    raw = ch.recv(FrameType.OT_MSG)
    if len(raw) != count * 32:
        raise OTError("unexpected OT ciphertext size")
    enc = np.frombuffer(raw, dtype="<u8").reshape(count, 2, 2)
    out = np.empty((count, 2), dtype=np.uint64)
    for i in range(count):
        b = int(choices[i])
        out[i] = enc[i, b] ^ _pad(i, b, gmpy2.powmod(A, secrets[i], P))
    return out


# ---------------------------------------------------------------------------
# IKNP extension


def _expand(seeds: np.ndarray, count: int, index: int = 0) -> np.ndarray:
    """Each 128-bit seed -> ``count`` pseudorandom bits, shape (KAPPA, count) of uint8."""
    nbytes = (count + 7) // 8
    rows = [np.frombuffer(Prng(np.ascontiguousarray(k, "<u8").tobytes(), f"iknp-{index}").bytes(nbytes), np.uint8)
            for k in seeds]
    return np.unpackbits(np.stack(rows), axis=1, count=count, bitorder="little")


def _rows(bits: np.ndarray) -> np.ndarray:
    """(KAPPA, m) bit matrix -> m rows of 128 bits as (m, 2) uint64."""
    packed = np.packbits(np.ascontiguousarray(bits.T), axis=1, bitorder="little")
    return np.ascontiguousarray(packed).view("<u8").astype(np.uint64)


def _row_hash(rows: np.ndarray, index: int = 0) -> np.ndarray:
    from .garble import hash_rows

    tweak = np.empty_like(rows)
    tweak[:, 0] = np.uint64((1 << 63) | index)
    tweak[:, 1] = np.arange(len(rows), dtype=np.uint64)
    return hash_rows(rows, np.zeros_like(rows), tweak)


def _ext_send(ch: Channel, m0: np.ndarray, m1: np.ndarray, rng: Prng) -> None:
    count = len(m0)
    state = ch.ot_state.get("ext_send")
    if state is None:
        s = rng.bits(KAPPA).astype(np.uint8)
        state = ch.ot_state["ext_send"] = {"s": s, "seeds": _base_receive(ch, s, rng), "index": 0}
    s, seeds, index = state["s"], state["seeds"], state["index"]
    state["index"] += 1
    raw = ch.recv(FrameType.OT_MSG)
    nbytes = (count + 7) // 8
    if len(raw) != KAPPA * nbytes:
        raise OTError("unexpected extension matrix size")
    u = np.unpackbits(np.frombuffer(raw, np.uint8).reshape(KAPPA, nbytes), axis=1, count=count, bitorder="little")
    q = _rows(_expand(seeds, count, index) ^ (u * s[:, None]))
    s_row = np.packbits(s, bitorder="little").view("<u8").astype(np.uint64)
    y0 = m0 ^ _row_hash(q, index)
    y1 = m1 ^ _row_hash(q ^ s_row, index)
    ch.send(FrameType.OT_MSG, np.stack([y0, y1], axis=1).astype("<u8").tobytes())


def _ext_receive(ch: Channel, choices: np.ndarray, rng: Prng) -> np.ndarray:
    count = len(choices)
    state = ch.ot_state.get("ext_receive")
    if state is None:
        k0, k1 = rng.uint64((KAPPA, 2)), rng.uint64((KAPPA, 2))
        _base_send(ch, k0, k1, rng)
        state = ch.ot_state["ext_receive"] = {"k0": k0, "k1": k1, "index": 0}
    k0, k1, index = state["k0"], state["k1"], state["index"]
    state["index"] += 1
    t = _expand(k0, count, index)
    u = t ^ _expand(k1, count, index) ^ choices[None, :]
    ch.send(FrameType.OT_MSG, np.packbits(u, axis=1, bitorder="little").tobytes())
    raw = ch.recv(FrameType.OT_MSG)
    if len(raw) != count * 32:
        raise OTError("unexpected extension ciphertext size")
    enc = np.frombuffer(raw, dtype="<u8").reshape(count, 2, 2).astype(np.uint64)
    return enc[np.arange(count), choices] ^ _row_hash(_rows(t), index)
