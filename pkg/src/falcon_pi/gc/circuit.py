"""Word-level SIMD circuits.

A circuit is a DAG of gates over wire bundles.  Each bundle carries ``simd_len`` independent
lanes of ``bit_width``-bit unsigned words.  The costed gate set is ADD, SUB, GT, MUX, MUL and
SUBSET; CONST, XOR, SHR, RESIZE, GATHER and CONCAT are free in a free-XOR garbling (wiring,
constants and XORs only).  ``CircuitGraph.evaluate`` is the cleartext backend.
"""

from __future__ import annotations

import enum
import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

GARBLER = "garbler"
EVALUATOR = "evaluator"
MAX_WIDTH = 128


class Kind(str, enum.Enum):
    ADD = "ADD"
    SUB = "SUB"
    GT = "GT"
    MUX = "MUX"
    MUL = "MUL"
    CONST = "CONST"
    SUBSET = "SUBSET"
    XOR = "XOR"
    SHR = "SHR"
    RESIZE = "RESIZE"
    GATHER = "GATHER"
    CONCAT = "CONCAT"


SIMD_KINDS = (Kind.ADD, Kind.SUB, Kind.GT, Kind.MUX)


class CircuitError(ValueError):
    pass


@dataclass(frozen=True)
class WireBundle:
    id: int
    bit_width: int
    simd_len: int

    def __post_init__(self):
        if not 1 <= self.bit_width <= MAX_WIDTH:
            raise CircuitError(f"bit width {self.bit_width} outside [1, {MAX_WIDTH}]")
        if self.simd_len < 1:
            raise CircuitError("simd_len must be positive")


@dataclass(frozen=True)
class Gate:
    kind: Kind
    inputs: tuple[int, ...]
    outputs: tuple[int, ...]
    params: tuple = ()
    group: int | None = None


@dataclass(frozen=True)
class Port:
    name: str
    party: str
    bundle: int


def _mask(width: int) -> int:
    return (1 << width) - 1


@dataclass(frozen=True, eq=False)
class CircuitGraph:
    bundles: tuple[WireBundle, ...]
    gates: tuple[Gate, ...]
    inputs: tuple[Port, ...]
    outputs: tuple[Port, ...]
    name: str = ""

    def bundle(self, ident: int) -> WireBundle:
        return self.bundles[ident]

    def port(self, name: str) -> Port:
        for p in self.inputs + self.outputs:
            if p.name == name:
                return p
        raise KeyError(name)

    def inputs_of(self, party: str) -> list[Port]:
        return [p for p in self.inputs if p.party == party]

    def outputs_of(self, party: str) -> list[Port]:
        return [p for p in self.outputs if p.party == party]

    def canonical(self) -> bytes:
        doc = {
            "name": self.name,
            "bundles": [[b.bit_width, b.simd_len] for b in self.bundles],
            "gates": [[g.kind.value, list(g.inputs), list(g.outputs), _jsonable(g.params), g.group] for g in self.gates],
            "inputs": [[p.name, p.party, p.bundle] for p in self.inputs],
            "outputs": [[p.name, p.party, p.bundle] for p in self.outputs],
        }
        return json.dumps(doc, separators=(",", ":"), sort_keys=True).encode()

    @property
    def hash(self) -> bytes:
        cached = self.__dict__.get("_hash")
        if cached is None:
            cached = hashlib.sha256(self.canonical()).digest()
            object.__setattr__(self, "_hash", cached)
        return cached

    # cleartext backend -----------------------------------------------------

    def evaluate(self, inputs: dict) -> dict[str, np.ndarray]:
        vals: dict[int, np.ndarray] = {}
        for port in self.inputs:
            b = self.bundles[port.bundle]
            if port.name not in inputs:
                raise CircuitError(f"missing input {port.name!r}")
            vals[b.id] = _lanes(inputs[port.name], b)
        for g in self.gates:
            outs = _eval_gate(g, [vals[i] for i in g.inputs], [self.bundles[o] for o in g.outputs], self)
            for o, v in zip(g.outputs, outs):
                vals[o] = v
        return {p.name: vals[p.bundle] for p in self.outputs}


def _jsonable(params):
    if isinstance(params, (tuple, list)):
        return [_jsonable(v) for v in params]
    if isinstance(params, np.ndarray):
        return _jsonable(params.tolist())
    if isinstance(params, (np.integer,)):
        return int(params)
    return params


def _lanes(value, b: WireBundle) -> np.ndarray:
    arr = np.asarray(value, dtype=object).reshape(-1)
    if arr.size == 1 and b.simd_len > 1:
        arr = np.array([arr[0]] * b.simd_len, dtype=object)
    if arr.size != b.simd_len:
        raise CircuitError(f"expected {b.simd_len} lanes, got {arr.size}")
    out = np.array([int(v) for v in arr], dtype=object)
    if any(v < 0 or v >> b.bit_width for v in out):
        raise CircuitError(f"input does not fit in {b.bit_width} bits")
    return out


def _eval_gate(g: Gate, ins, outs, circ):
    k = g.kind
    w = outs[0].bit_width
    m = _mask(w)
    if k is Kind.ADD:
        return [(ins[0] + ins[1]) & m]
    if k is Kind.SUB:
        return [(ins[0] - ins[1]) & m]
    if k is Kind.GT:
        return [np.array([int(a > b) for a, b in zip(ins[0], ins[1])], dtype=object)]
    if k is Kind.MUX:
        return [np.where(ins[2] == 1, ins[0], ins[1])]
    if k is Kind.MUL:
        return [(ins[0] * ins[1]) & m]
    if k is Kind.XOR:
        return [ins[0] ^ ins[1]]
    if k is Kind.CONST:
        return [_lanes(g.params[0], outs[0])]
    if k is Kind.SHR:
        return [ins[0] >> g.params[0]]
    if k is Kind.RESIZE:
        return [ins[0] & m]
    if k is Kind.GATHER:
        return [ins[0][list(g.params[0])]]
    if k is Kind.CONCAT:
        return [np.concatenate(ins)]
    if k is Kind.SUBSET:
        regions = np.array(g.params[0], dtype=np.int64)
        return [ins[0][regions[:, e]] for e in range(regions.shape[1])]
    raise CircuitError(f"unknown gate {k}")


class CircuitBuilder:
    def __init__(self, name: str = ""):
        self.name = name
        self._bundles: list[WireBundle] = []
        self._gates: list[Gate] = []
        self._inputs: list[Port] = []
        self._outputs: list[Port] = []
        self._groups = 0

    def _new(self, width: int, simd: int) -> WireBundle:
        b = WireBundle(len(self._bundles), width, simd)
        self._bundles.append(b)
        return b

    def _emit(self, kind, ins, width, simd, params=(), group=None) -> WireBundle:
        out = self._new(width, simd)
        self._gates.append(Gate(kind, tuple(i.id for i in ins), (out.id,), params, group))
        return out

    @staticmethod
    def _same(a: WireBundle, b: WireBundle):
        if a.bit_width != b.bit_width:
            raise CircuitError(f"width mismatch {a.bit_width} vs {b.bit_width}")
        if a.simd_len != b.simd_len:
            raise CircuitError(f"SIMD length mismatch {a.simd_len} vs {b.simd_len}")

    def new_group(self) -> int:
        self._groups += 1
        return self._groups

    # ports
    def input(self, name: str, party: str, width: int, simd: int = 1) -> WireBundle:
        if party not in (GARBLER, EVALUATOR):
            raise CircuitError(f"unknown party {party!r}")
        if any(p.name == name for p in self._inputs + self._outputs):
            raise CircuitError(f"duplicate port {name!r}")
        b = self._new(width, simd)
        self._inputs.append(Port(name, party, b.id))
        return b

    def output(self, name: str, party: str, b: WireBundle) -> None:
        if party not in (GARBLER, EVALUATOR):
            raise CircuitError(f"unknown party {party!r}")
        if any(p.name == name for p in self._inputs + self._outputs):
            raise CircuitError(f"duplicate port {name!r}")
        self._outputs.append(Port(name, party, b.id))

    # costed gates
    def add(self, a, b, group=None):
        self._same(a, b)
        return self._emit(Kind.ADD, (a, b), a.bit_width, a.simd_len, group=group)

    def sub(self, a, b, group=None):
        self._same(a, b)
        return self._emit(Kind.SUB, (a, b), a.bit_width, a.simd_len, group=group)

    def gt(self, a, b, group=None):
        self._same(a, b)
        return self._emit(Kind.GT, (a, b), 1, a.simd_len, group=group)

    def mux(self, a, b, s, group=None):
        """a where s = 1, else b."""
        self._same(a, b)
        if s.bit_width != 1 or s.simd_len != a.simd_len:
            raise CircuitError("MUX selector must be a 1-bit bundle of matching length")
        return self._emit(Kind.MUX, (a, b, s), a.bit_width, a.simd_len, group=group)

    def mul(self, a, b):
        self._same(a, b)
        return self._emit(Kind.MUL, (a, b), a.bit_width, a.simd_len)

    def subset(self, x, regions) -> list[WireBundle]:
        regions = np.asarray(regions, dtype=np.int64)
        if regions.ndim != 2 or regions.size != x.simd_len:
            raise CircuitError("regions must tile the bundle")
        if sorted(regions.ravel().tolist()) != list(range(x.simd_len)):
            raise CircuitError("regions must be a permutation of the lanes")
        k = regions.shape[1]
        outs = [self._new(x.bit_width, regions.shape[0]) for _ in range(k)]
        self._gates.append(Gate(Kind.SUBSET, (x.id,), tuple(o.id for o in outs), (_jsonable(regions),)))
        return outs

    def subset_k(self, x, k: int) -> list[WireBundle]:
        if k < 1 or x.simd_len % k:
            raise CircuitError(f"k={k} does not divide N={x.simd_len}")
        return self.subset(x, np.arange(x.simd_len).reshape(-1, k))

    # free gates
    def const(self, value, width: int, simd: int = 1) -> WireBundle:
        if isinstance(value, (list, tuple, np.ndarray)):
            vals = [int(v) for v in np.asarray(value, dtype=object).reshape(-1)]
            if len(vals) != simd:
                raise CircuitError("constant lane count mismatch")
            param = tuple(vals)
        else:
            vals = [int(value)]
            param = int(value)
        if any(v < 0 or v >> width for v in vals):
            raise CircuitError(f"constant does not fit in {width} bits")
        return self._emit(Kind.CONST, (), width, simd, (param,))

    def xor(self, a, b):
        self._same(a, b)
        return self._emit(Kind.XOR, (a, b), a.bit_width, a.simd_len)

    def shr(self, a, s: int):
        if not 0 <= s < a.bit_width:
            raise CircuitError("shift out of range")
        return self._emit(Kind.SHR, (a,), a.bit_width - s, a.simd_len, (int(s),))

    def resize(self, a, width: int):
        return self._emit(Kind.RESIZE, (a,), width, a.simd_len, (int(width),))

    def gather(self, a, idx):
        idx = [int(i) for i in np.asarray(idx).reshape(-1)]
        if not idx or min(idx) < 0 or max(idx) >= a.simd_len:
            raise CircuitError("gather index out of range")
        return self._emit(Kind.GATHER, (a,), a.bit_width, len(idx), (tuple(idx),))

    def broadcast(self, a, n: int):
        if a.simd_len != 1:
            raise CircuitError("broadcast needs a single-lane bundle")
        return self.gather(a, [0] * n)

    def concat(self, parts):
        parts = list(parts)
        if len({p.bit_width for p in parts}) != 1:
            raise CircuitError("concat needs equal widths")
        return self._emit(Kind.CONCAT, parts, parts[0].bit_width, sum(p.simd_len for p in parts))

    def build(self) -> CircuitGraph:
        return CircuitGraph(tuple(self._bundles), tuple(self._gates), tuple(self._inputs), tuple(self._outputs), self.name)


# ---------------------------------------------------------------------------
# cost accounting


def simd_label(length: int, full: int | None) -> str:
    if full is None or length == full:
        return "SIMD(N)" if full is not None else f"SIMD({length})"
    if full % length == 0:
        return f"SIMD(N/{full // length})"
    return f"SIMD({length})"


@dataclass
class Cost:
    """Costs in SIMD units keyed by lane count, plus SUBSET operations."""

    simd: Counter = field(default_factory=Counter)
    subset: int = 0

    def __add__(self, other: "Cost") -> "Cost":
        return Cost(self.simd + other.simd, self.subset + other.subset)

    def __sub__(self, other: "Cost") -> "Cost":
        c = Counter(self.simd)
        c.subtract(other.simd)
        return Cost(c, self.subset - other.subset)

    def terms(self) -> dict:
        return {n: c for n, c in self.simd.items() if c}

    def __eq__(self, other):
        return isinstance(other, Cost) and self.terms() == other.terms() and self.subset == other.subset

    @property
    def units(self) -> int:
        return sum(self.simd.values())

    def lane_units(self) -> int:
        """Total work in single-lane units: sum of count x lane length."""
        return sum(n * c for n, c in self.simd.items())

    def describe(self, full: int | None = None) -> str:
        parts = []
        if self.subset:
            parts.append(f"{self.subset}*Subset")
        for n in sorted(self.simd, reverse=True):
            if self.simd[n]:
                parts.append(f"{self.simd[n]}*{simd_label(n, full)}")
        return " + ".join(parts) or "0"


def simd_cost(*terms, subset: int = 0) -> Cost:
    """simd_cost((4, N), (3, N // 4), subset=1) is 1 Subset + 4 SIMD(N) + 3 SIMD(N/4)."""
    c = Counter()
    for count, length in terms:
        c[length] += count
    return Cost(c, subset)


@dataclass
class GateCount:
    kinds: Counter
    cost: Cost
    mul: Counter

    def as_dict(self) -> dict:
        return {
            "kinds": dict(self.kinds),
            "simd": {str(k): v for k, v in self.cost.simd.items()},
            "subset": self.cost.subset,
            "mul": {str(k): v for k, v in self.mul.items()},
        }


def gate_count(circuit: CircuitGraph) -> GateCount:
    kinds = Counter()
    simd = Counter()
    mul = Counter()
    seen_groups = set()
    subset = 0
    for g in circuit.gates:
        kinds[g.kind.value] += 1
        n = circuit.bundles[g.inputs[0]].simd_len if g.inputs else 0
        if g.kind in SIMD_KINDS:
            if g.group is None:
                simd[n] += 1
            elif g.group not in seen_groups:
                seen_groups.add(g.group)
                simd[n] += 1
        elif g.kind is Kind.SUBSET:
            subset += 1
        elif g.kind is Kind.MUL:
            mul[n] += 1
    return GateCount(kinds, Cost(simd, subset), mul)
