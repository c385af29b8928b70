"""Lowering of word-level circuits to a lane-vectorised boolean netlist.

Bits are either wire ids or Python bools (public constants, identical on every lane).
Constants are propagated at compile time, so fixed operands shrink the AND count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .circuit import CircuitGraph, Kind


@dataclass
class Netlist:
    lanes: list[int] = field(default_factory=list)
    ops: list[tuple] = field(default_factory=list)
    inputs: dict[str, list[int]] = field(default_factory=dict)
    outputs: dict[str, list] = field(default_factory=dict)
    out_lanes: dict[str, int] = field(default_factory=dict)
    parties: dict[str, str] = field(default_factory=dict)
    circuit_hash: bytes = b""

    @property
    def and_ops(self) -> int:
        return sum(1 for op in self.ops if op[0] == "and")

    @property
    def and_rows(self) -> int:
        return sum(self.lanes[op[1]] for op in self.ops if op[0] == "and")

    @property
    def xor_rows(self) -> int:
        return sum(self.lanes[op[1]] for op in self.ops if op[0] in ("xor", "not"))

    # --- construction helpers with constant propagation

    def wire(self, lanes: int) -> int:
        self.lanes.append(lanes)
        return len(self.lanes) - 1

    def xor(self, a, b, lanes):
        if isinstance(a, bool) and isinstance(b, bool):
            return a ^ b
        if isinstance(a, bool):
            a, b = b, a
        if b is False:
            return a
        if b is True:
            return self.not_(a, lanes)
        if a == b:
            return False
        out = self.wire(lanes)
        self.ops.append(("xor", out, a, b))
        return out

    def not_(self, a, lanes):
        if isinstance(a, bool):
            return not a
        out = self.wire(lanes)
        self.ops.append(("not", out, a))
        return out

    def and_(self, a, b, lanes):
        if isinstance(a, bool) and isinstance(b, bool):
            return a and b
        if isinstance(a, bool):
            a, b = b, a
        if b is False:
            return False
        if b is True:
            return a
        if a == b:
            return a
        out = self.wire(lanes)
        self.ops.append(("and", out, a, b))
        return out

    def gather(self, a, idx):
        if isinstance(a, bool):
            return a
        idx = np.asarray(idx, dtype=np.int64)
        if len(idx) == self.lanes[a] and (idx == np.arange(len(idx))).all():
            return a
        out = self.wire(len(idx))
        self.ops.append(("gather", out, a, idx))
        return out

    def const_wire(self, bits):
        bits = np.asarray(bits, dtype=bool)
        out = self.wire(len(bits))
        self.ops.append(("const", out, bits))
        return out

    def concat(self, parts, lens):
        if all(isinstance(p, bool) for p in parts) and len(set(parts)) == 1:
            return parts[0]
        refs = [self.const_wire(np.full(n, p)) if isinstance(p, bool) else p for p, n in zip(parts, lens)]
        out = self.wire(sum(lens))
        self.ops.append(("concat", out, refs))
        return out


def _adder(nl, a, b, carry, lanes, width):
    out = []
    for i in range(width):
        x, y = a[i], b[i]
        out.append(nl.xor(nl.xor(x, y, lanes), carry, lanes))
        if i + 1 < width:
            carry = nl.xor(carry, nl.and_(nl.xor(x, carry, lanes), nl.xor(y, carry, lanes), lanes), lanes)
    return out


def _carry_out(nl, a, b, carry, lanes):
    for x, y in zip(a, b):
        carry = nl.xor(carry, nl.and_(nl.xor(x, carry, lanes), nl.xor(y, carry, lanes), lanes), lanes)
    return carry


def _const_bits(nl, value, width, lanes):
    if isinstance(value, int):
        return [bool(value >> i & 1) for i in range(width)]
    vals = np.array(value, dtype=object)
    bits = []
    for i in range(width):
        col = np.array([bool(int(v) >> i & 1) for v in vals])
        if col.all() or not col.any():
            bits.append(bool(col[0]))
        else:
            bits.append(nl.const_wire(col))
    return bits


def compile_circuit(circ: CircuitGraph) -> Netlist:
    nl = Netlist(circuit_hash=circ.hash)
    bits: dict[int, list] = {}
    for port in circ.inputs:
        b = circ.bundles[port.bundle]
        bits[b.id] = [nl.wire(b.simd_len) for _ in range(b.bit_width)]
        nl.inputs[port.name] = bits[b.id]
        nl.parties[port.name] = port.party
    for g in circ.gates:
        outb = [circ.bundles[o] for o in g.outputs]
        lanes = outb[0].simd_len
        w = outb[0].bit_width
        ins = [bits[i] for i in g.inputs]
        k = g.kind
        if k is Kind.ADD:
            res = [_adder(nl, ins[0], ins[1], False, lanes, w)]
        elif k is Kind.SUB:
            nb = [nl.not_(x, lanes) for x in ins[1]]
            res = [_adder(nl, ins[0], nb, True, lanes, w)]
        elif k is Kind.GT:
            na = [nl.not_(x, lanes) for x in ins[0]]
            res = [[nl.not_(_carry_out(nl, ins[1], na, True, lanes), lanes)]]
        elif k is Kind.MUX:
            s = ins[2][0]
            res = [[nl.xor(y, nl.and_(s, nl.xor(x, y, lanes), lanes), lanes) for x, y in zip(ins[0], ins[1])]]
        elif k is Kind.MUL:
            a, b = ins
            acc = [False] * w
            for i in range(w):
                if b[i] is False:
                    continue
                pp = [nl.and_(a[j - i], b[i], lanes) for j in range(i, w)]
                acc = acc[:i] + _adder(nl, acc[i:], pp, False, lanes, w - i)
            res = [acc]
        elif k is Kind.CONST:
            res = [_const_bits(nl, g.params[0], w, lanes)]
        elif k is Kind.XOR:
            res = [[nl.xor(x, y, lanes) for x, y in zip(*ins)]]
        elif k is Kind.SHR:
            res = [ins[0][g.params[0]:]]
        elif k is Kind.RESIZE:
            src = ins[0]
            res = [(src + [False] * w)[:w]]
        elif k is Kind.GATHER:
            idx = np.array(g.params[0], dtype=np.int64)
            res = [[nl.gather(x, idx) for x in ins[0]]]
        elif k is Kind.CONCAT:
            lens = [circ.bundles[i].simd_len for i in g.inputs]
            res = [[nl.concat([p[j] for p in ins], lens) for j in range(w)]]
        elif k is Kind.SUBSET:
            regions = np.array(g.params[0], dtype=np.int64)
            res = [[nl.gather(x, regions[:, e]) for x in ins[0]] for e in range(regions.shape[1])]
        else:
            raise ValueError(f"cannot lower {k}")
        for o, r in zip(g.outputs, res):
            bits[o] = r
    for port in circ.outputs:
        b = circ.bundles[port.bundle]
        nl.outputs[port.name] = bits[b.id]
        nl.out_lanes[port.name] = b.simd_len
        nl.parties[port.name] = port.party
    return nl
