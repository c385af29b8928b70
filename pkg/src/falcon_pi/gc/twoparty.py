"""Two-party execution of a garbled circuit over a framed channel.

Message order: GC_TABLES (circuit hash, tables, evaluator decode bits), then in the online
part SHARE_MSG with the garbler's active labels, OT_MSG frames for the evaluator's input
labels, and finally SHARE_MSG with pointer bits for any garbler-declared outputs.
Decode bits of outputs named in ``withhold`` are kept back and sent later by the caller.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .._rng import Prng
from ..runtime.framing import Channel, ErrorCode, FrameType, ProtocolError
from .boolean import Netlist, compile_circuit
from .circuit import EVALUATOR, GARBLER, CircuitGraph
from .garble import GarbledCircuit, decode_pointer_bits, evaluate, garble, pointer_bits
from .ot import ObliviousTransferConfig, ot_receive, ot_send


class CircuitMismatch(ProtocolError):
    pass


def _party_outputs(nl: Netlist, party: str) -> list[str]:
    return [name for name in nl.outputs if nl.parties[name] == party]


def _party_inputs(nl: Netlist, party: str) -> list[str]:
    return [name for name in nl.inputs if nl.parties[name] == party]


def _pack_bits(bits: np.ndarray) -> bytes:
    return np.packbits(bits.astype(np.uint8).reshape(-1)).tobytes()


def _unpack_bits(raw: bytes, shape) -> np.ndarray:
    n = int(np.prod(shape))
    return np.unpackbits(np.frombuffer(raw, dtype=np.uint8))[:n].reshape(shape)


def _bits_len(shape) -> int:
    return (int(np.prod(shape)) + 7) // 8


def decode_map_bytes(gc: GarbledCircuit, names) -> bytes:
    return b"".join(_pack_bits(gc.decode[n]) for n in names)


def parse_decode_map(nl: Netlist, names, raw: bytes) -> dict[str, np.ndarray]:
    out, off = {}, 0
    for n in names:
        shape = (len(nl.outputs[n]), nl.out_lanes[n])
        size = _bits_len(shape)
        if off + size > len(raw):
            raise ProtocolError("truncated decode map")
        out[n] = _unpack_bits(raw[off:off + size], shape)
        off += size
    if off != len(raw):
        raise ProtocolError("trailing bytes in decode map")
    return out


def tables_payload(gc: GarbledCircuit, withhold=()) -> bytes:
    names = [n for n in _party_outputs(gc.netlist, EVALUATOR) if n not in withhold]
    tables = gc.tables.astype("<u8").tobytes()
    return gc.circuit_hash + struct.pack("<Q", len(tables)) + tables + decode_map_bytes(gc, names)


@dataclass
class ReceivedTables:
    netlist: Netlist
    tables: np.ndarray
    decode: dict[str, np.ndarray]
    withheld: tuple[str, ...] = ()


def send_tables(ch: Channel, gc: GarbledCircuit, withhold=()) -> None:
    ch.send(FrameType.GC_TABLES, tables_payload(gc, withhold))


def recv_tables(ch: Channel, circuit: CircuitGraph | Netlist, withhold=()) -> ReceivedTables:
    nl = circuit if isinstance(circuit, Netlist) else compile_circuit(circuit)
    raw = ch.recv(FrameType.GC_TABLES)
    if raw[:32] != nl.circuit_hash:
        ch.send_error(ErrorCode.PROTOCOL, "circuit hash mismatch")
        raise CircuitMismatch("garbler and evaluator hold different circuits")
    (size,) = struct.unpack_from("<Q", raw, 32)
    if size != nl.and_rows * 64 or len(raw) < 40 + size:
        raise ProtocolError("garbled table size does not match the circuit")
    tables = np.frombuffer(raw, dtype="<u8", count=size // 8, offset=40).reshape(-1, 4, 2).astype(np.uint64)
    names = [n for n in _party_outputs(nl, EVALUATOR) if n not in withhold]
    decode = parse_decode_map(nl, names, raw[40 + size:])
    return ReceivedTables(nl, tables, decode, tuple(withhold))


def _labels_bytes(arrays) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype="<u8").tobytes() for a in arrays)


def garbler_online(ch: Channel, gc: GarbledCircuit, inputs: dict, ot: ObliviousTransferConfig, rng: Prng) -> dict:
    nl = gc.netlist
    own = _party_inputs(nl, GARBLER)
    missing = set(own) - set(inputs)
    if missing:
        raise ValueError(f"missing garbler inputs {sorted(missing)}")
    ch.send(FrameType.SHARE_MSG, _labels_bytes([gc.encode(n, inputs[n]) for n in own] + gc.const_labels()))
    ev_names = _party_inputs(nl, EVALUATOR)
    if ev_names and any(nl.inputs[n] for n in ev_names):
        pairs = [gc.label_pairs(n) for n in ev_names]
        m0 = np.concatenate([p[0].reshape(-1, 2) for p in pairs])
        m1 = np.concatenate([p[1].reshape(-1, 2) for p in pairs])
        ot_send(ch, m0, m1, ot, rng)
    outs = _party_outputs(nl, GARBLER)
    result = {}
    if outs:
        raw = ch.recv(FrameType.SHARE_MSG)
        off = 0
        for n in outs:
            shape = (len(nl.outputs[n]), nl.out_lanes[n])
            size = _bits_len(shape)
            ptr = _unpack_bits(raw[off:off + size], shape)
            off += size
            result[n] = decode_pointer_bits(ptr, nl.outputs[n], gc.decode[n], nl.out_lanes[n])
        if off != len(raw):
            raise ProtocolError("trailing bytes in output message")
    return result


@dataclass
class EvaluatorResult:
    outputs: dict
    pending: dict = field(default_factory=dict)

    def finish(self, rt: ReceivedTables, decode: dict[str, np.ndarray]) -> dict:
        """Decode withheld outputs once their decode bits arrive."""
        nl = rt.netlist
        return {
            n: decode_pointer_bits(ptr, nl.outputs[n], decode[n], nl.out_lanes[n])
            for n, ptr in self.pending.items()
        }


def evaluator_online(ch: Channel, rt: ReceivedTables, inputs: dict, ot: ObliviousTransferConfig, rng: Prng) -> EvaluatorResult:
    nl = rt.netlist
    g_names = _party_inputs(nl, GARBLER)
    raw = ch.recv(FrameType.SHARE_MSG)
    arr = np.frombuffer(raw, dtype="<u8").astype(np.uint64)
    labels, off = {}, 0
    for n in g_names:
        wires = nl.inputs[n]
        size = len(wires) * (nl.lanes[wires[0]] if wires else 0) * 2
        labels[n] = arr[off:off + size].reshape(len(wires), -1, 2)
        off += size
    consts = []
    for op in nl.ops:
        if op[0] == "const":
            size = nl.lanes[op[1]] * 2
            consts.append(arr[off:off + size].reshape(-1, 2))
            off += size
    if off != len(arr):
        raise ProtocolError("garbler label message has the wrong size")
    ev_names = _party_inputs(nl, EVALUATOR)
    missing = set(ev_names) - set(inputs)
    if missing:
        raise ValueError(f"missing evaluator inputs {sorted(missing)}")
    if ev_names and any(nl.inputs[n] for n in ev_names):
        choice = []
        for n in ev_names:
            wires = nl.inputs[n]
            lanes = nl.lanes[wires[0]]
            vals = np.asarray(inputs[n], dtype=object).reshape(-1)
            if vals.size == 1 and lanes > 1:
                vals = np.array([vals[0]] * lanes, dtype=object)
            if vals.size != lanes:
                raise ValueError(f"input {n!r} needs {lanes} lanes")
            for i in range(len(wires)):
                choice.append(np.array([(int(v) >> i) & 1 for v in vals], dtype=np.uint8))
            if any(int(v) < 0 or int(v) >> len(wires) for v in vals):
                raise ValueError(f"input {n!r} does not fit in {len(wires)} bits")
        got = ot_receive(ch, np.concatenate(choice), ot, rng)
        off = 0
        for n in ev_names:
            wires = nl.inputs[n]
            size = len(wires) * nl.lanes[wires[0]]
            labels[n] = got[off:off + size].reshape(len(wires), -1, 2)
            off += size
    active = evaluate(nl, rt.tables, labels, consts)
    result = EvaluatorResult({})
    for n in _party_outputs(nl, EVALUATOR):
        if n in rt.withheld:
            result.pending[n] = pointer_bits(active[n], nl.out_lanes[n])
        else:
            ptr = pointer_bits(active[n], nl.out_lanes[n])
            result.outputs[n] = decode_pointer_bits(ptr, nl.outputs[n], rt.decode[n], nl.out_lanes[n])
    g_outs = _party_outputs(nl, GARBLER)
    if g_outs:
        ch.send(FrameType.SHARE_MSG, b"".join(_pack_bits(pointer_bits(active[n], nl.out_lanes[n])) for n in g_outs))
    return result


def run_two_party(role: str, circuit: CircuitGraph, inputs: dict, channel: Channel,
                  ot_config: ObliviousTransferConfig, seed=None) -> dict:
    """Run one circuit end to end; returns the calling party's declared outputs."""
    rng = Prng(seed, f"2pc-{role}")
    if role == GARBLER:
        gc = garble(circuit, rng.bytes(32))
        send_tables(channel, gc)
        return garbler_online(channel, gc, inputs, ot_config, rng)
    if role == EVALUATOR:
        rt = recv_tables(channel, circuit)
        return evaluator_online(channel, rt, inputs, ot_config, rng).outputs
    raise ValueError(f"unknown role {role!r}")
