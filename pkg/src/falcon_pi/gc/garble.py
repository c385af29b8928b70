"""Free-XOR, point-and-permute garbling with classic four-row AND tables.

Labels are 128-bit, stored as little-endian pairs of uint64 with shape (lanes, 2).  The
pointer bit is the least significant bit of word 0.  Row keys use the fixed-key AES
construction H(A, B, T) = AES_k(K) ^ K with K = 2A ^ 4B ^ T over GF(2^128).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .._rng import Prng
from .boolean import Netlist, compile_circuit
from .circuit import CircuitGraph

FIXED_KEY = bytes(range(16))
_aes = Cipher(algorithms.AES(FIXED_KEY), modes.ECB())
_ONE = np.uint64(1)
_R = np.uint64(0x87)


def _double(x: np.ndarray) -> np.ndarray:
    lo, hi = x[..., 0], x[..., 1]
    carry = hi >> np.uint64(63)
    out = np.empty_like(x)
    out[..., 1] = (hi << _ONE) | (lo >> np.uint64(63))
    out[..., 0] = (lo << _ONE) ^ (carry * _R)
    return out


def hash_rows(a: np.ndarray, b: np.ndarray, tweak: np.ndarray) -> np.ndarray:
    k = _double(a) ^ _double(_double(b)) ^ tweak
    flat = np.ascontiguousarray(k, dtype="<u8")
    enc = _aes.encryptor().update(flat.tobytes())
    return np.frombuffer(enc, dtype="<u8").reshape(k.shape) ^ k


def _tweaks(gate: int, lanes: int) -> np.ndarray:
    t = np.empty((lanes, 2), dtype=np.uint64)
    t[:, 0] = np.uint64(gate)
    t[:, 1] = np.arange(lanes, dtype=np.uint64)
    return t


def lsb(labels: np.ndarray) -> np.ndarray:
    return (labels[..., 0] & _ONE).astype(np.uint8)


@dataclass
class GarbledCircuit:
    """Garbler-side state.  Only ``tables`` and the decode bits of declared outputs are public."""

    netlist: Netlist
    delta: np.ndarray
    zero: dict[int, np.ndarray]
    tables: np.ndarray
    decode: dict[str, np.ndarray]

    @property
    def circuit_hash(self) -> bytes:
        return self.netlist.circuit_hash

    def encode(self, name: str, values) -> np.ndarray:
        """Active labels (bits, lanes, 2) of an input for the given lane values."""
        wires = self.netlist.inputs[name]
        vals = _lane_ints(values, self.netlist.lanes[wires[0]] if wires else 1)
        out = []
        for i, w in enumerate(wires):
            bit = np.array([(v >> i) & 1 for v in vals], dtype=np.uint64)
            out.append(self.zero[w] ^ (bit[:, None] * self.delta))
        return np.stack(out) if out else np.zeros((0, 1, 2), dtype=np.uint64)

    def label_pairs(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        wires = self.netlist.inputs[name]
        zero = np.stack([self.zero[w] for w in wires])
        return zero, zero ^ self.delta

    def const_labels(self) -> list[np.ndarray]:
        out = []
        for op in self.netlist.ops:
            if op[0] == "const":
                out.append(self.zero[op[1]] ^ (op[2].astype(np.uint64)[:, None] * self.delta))
        return out


def _lane_ints(values, lanes):
    arr = np.asarray(values, dtype=object).reshape(-1)
    if arr.size == 1 and lanes > 1:
        arr = np.array([arr[0]] * lanes, dtype=object)
    if arr.size != lanes:
        raise ValueError(f"expected {lanes} lanes, got {arr.size}")
    return [int(v) for v in arr]


def garble(circuit: CircuitGraph | Netlist, seed) -> GarbledCircuit:
    nl = circuit if isinstance(circuit, Netlist) else compile_circuit(circuit)
    rng = Prng(seed, "garble")
    delta = rng.uint64(2)
    delta[0] |= _ONE
    zero: dict[int, np.ndarray] = {}
    for wires in nl.inputs.values():
        for w in wires:
            zero[w] = rng.uint64((nl.lanes[w], 2))
    tables = []
    gate = 0
    for op in nl.ops:
        kind, out = op[0], op[1]
        if kind == "xor":
            zero[out] = zero[op[2]] ^ zero[op[3]]
        elif kind == "not":
            zero[out] = zero[op[2]] ^ delta
        elif kind == "gather":
            zero[out] = zero[op[2]][op[3]]
        elif kind == "concat":
            zero[out] = np.concatenate([zero[r] for r in op[2]])
        elif kind == "const":
            zero[out] = rng.uint64((nl.lanes[out], 2))
        elif kind == "and":
            lanes = nl.lanes[out]
            a0, b0 = zero[op[2]], zero[op[3]]
            c0 = rng.uint64((lanes, 2))
            zero[out] = c0
            pa, pb = lsb(a0), lsb(b0)
            tw = _tweaks(gate, lanes)
            gate += 1
            a_all = np.concatenate([a0, a0, a0 ^ delta, a0 ^ delta])
            b_all = np.concatenate([b0, b0 ^ delta, b0, b0 ^ delta])
            keys = hash_rows(a_all, b_all, np.concatenate([tw] * 4)).reshape(4, lanes, 2)
            table = np.empty((lanes, 4, 2), dtype=np.uint64)
            ar = np.arange(lanes)
            for j, (va, vb) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
                row = 2 * (pa ^ va) + (pb ^ vb)
                c = c0 ^ delta if va & vb else c0
                table[ar, row] = keys[j] ^ c
            tables.append(table)
        else:
            raise ValueError(kind)
    decode = {}
    for name, refs in nl.outputs.items():
        lanes = nl.out_lanes[name]
        rows = [np.zeros(lanes, dtype=np.uint8) if isinstance(r, bool) else lsb(zero[r]) for r in refs]
        decode[name] = np.stack(rows) if rows else np.zeros((0, lanes), dtype=np.uint8)
    all_tables = np.concatenate(tables) if tables else np.zeros((0, 4, 2), dtype=np.uint64)
    return GarbledCircuit(nl, delta, zero, all_tables, decode)


def evaluate(nl: Netlist, tables: np.ndarray, inputs: dict[str, np.ndarray], consts: list[np.ndarray]):
    """Evaluate with one active label per wire; returns active labels per output (bools kept)."""
    act: dict[int, np.ndarray] = {}
    for name, wires in nl.inputs.items():
        labels = inputs[name]
        for i, w in enumerate(wires):
            act[w] = labels[i]
    const_iter = iter(consts)
    offset, gate = 0, 0
    for op in nl.ops:
        kind, out = op[0], op[1]
        if kind == "xor":
            act[out] = act[op[2]] ^ act[op[3]]
        elif kind == "not":
            act[out] = act[op[2]]
        elif kind == "gather":
            act[out] = act[op[2]][op[3]]
        elif kind == "concat":
            act[out] = np.concatenate([act[r] for r in op[2]])
        elif kind == "const":
            act[out] = next(const_iter)
        elif kind == "and":
            lanes = nl.lanes[out]
            a, b = act[op[2]], act[op[3]]
            row = 2 * lsb(a) + lsb(b)
            key = hash_rows(a, b, _tweaks(gate, lanes))
            gate += 1
            act[out] = tables[offset:offset + lanes][np.arange(lanes), row] ^ key
            offset += lanes
    return {name: [r if isinstance(r, bool) else act[r] for r in refs] for name, refs in nl.outputs.items()}


def decode_output(active: list, decode_bits: np.ndarray, lanes: int) -> np.ndarray:
    """Combine active output labels with decode bits into lane integers (object array)."""
    vals = np.zeros(lanes, dtype=object)
    for i, ref in enumerate(active):
        if isinstance(ref, bool):
            bit = np.full(lanes, int(ref), dtype=object)
        else:
            bit = (lsb(ref) ^ decode_bits[i]).astype(object)
        vals = vals + (bit << i)
    return vals


def pointer_bits(active: list, lanes: int) -> np.ndarray:
    rows = [np.zeros(lanes, dtype=np.uint8) if isinstance(r, bool) else lsb(r) for r in active]
    return np.stack(rows) if rows else np.zeros((0, lanes), dtype=np.uint8)


def decode_pointer_bits(ptr: np.ndarray, active: list, decode_bits: np.ndarray, lanes: int) -> np.ndarray:
    vals = np.zeros(lanes, dtype=object)
    for i, ref in enumerate(active):
        if isinstance(ref, bool):
            bit = np.full(lanes, int(ref), dtype=object)
        else:
            bit = (ptr[i] ^ decode_bits[i]).astype(object)
        vals = vals + (bit << i)
    return vals
