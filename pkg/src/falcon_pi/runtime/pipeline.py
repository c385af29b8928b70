"""The public layer plan both parties derive their circuits and packing from.

A model becomes a sequence of steps: encrypted linear layers, one garbled block after each
non-final linear layer (rescale plus the following ReLU and pooling layers), and a final
argmax or softmax step.  Only shapes, transform extents and pooling geometry appear here;
filter sizes and weights do not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .. import DEFAULT_P
from ..gc.circuit import CircuitGraph
from ..layers.circuits import PoolStage, block_circuit
from ..layers.linear import ConvGeometry, PackingLayout, as_conv
from ..model import LINEAR, FusedMaxPoolReLU, MaxPool, MeanPool, ModelDescriptor, ModelFormatError, ReLU, Softmax
from ..reference import pool_regions
from ..softmax import SoftmaxConfig, argmax_circuit, argmax_renormalize_circuit, denominator_circuit

PLAN_VERSION = 1


@dataclass(frozen=True)
class LinearStep:
    layer: int
    in_shape: tuple
    out_shape: tuple
    length: tuple
    padding: str

    def geometry(self) -> ConvGeometry:
        return ConvGeometry(self.in_shape, self.out_shape, self.length, self.padding)

    def layout(self, n: int) -> PackingLayout:
        return PackingLayout(self.in_shape[0], self.length, n)


@dataclass(frozen=True)
class BlockStep:
    layers: tuple
    in_shape: tuple
    out_shape: tuple
    ops: tuple  # (kind, size) pairs

    @property
    def N(self) -> int:
        return math.prod(self.in_shape)

    def stages(self) -> list[PoolStage]:
        shape, out = self.in_shape, []
        for kind, size in self.ops:
            if kind == "relu":
                out.append(PoolStage("relu"))
                continue
            out.append(PoolStage(kind, tuple(map(tuple, pool_regions(shape, size).tolist()))))
            c, w, h = shape
            shape = (c, w // size, h // size)
        return out


@dataclass(frozen=True)
class FinalStep:
    K: int
    mode: str  # "softmax" | "argmax"
    l: int | None = None


@dataclass
class Plan:
    input_shape: tuple
    frac_bits: int
    steps: list = field(default_factory=list)

    @property
    def linear(self) -> list[LinearStep]:
        return [s for s in self.steps if isinstance(s, LinearStep)]

    @property
    def final(self) -> FinalStep:
        return self.steps[-1]

    def softmax_config(self) -> SoftmaxConfig | None:
        f = self.final
        if f.mode != "softmax":
            return None
        return SoftmaxConfig(f.K, f.l, logit_frac_bits=2 * self.frac_bits)

    def to_meta(self) -> dict:
        steps = []
        for s in self.steps:
            if isinstance(s, LinearStep):
                steps.append({"type": "linear", "in_shape": list(s.in_shape), "out_shape": list(s.out_shape),
                              "length": list(s.length), "padding": s.padding})
            elif isinstance(s, BlockStep):
                steps.append({"type": "block", "in_shape": list(s.in_shape), "out_shape": list(s.out_shape),
                              "ops": [list(o) for o in s.ops]})
            else:
                steps.append({"type": s.mode, "K": s.K, "l": s.l})
        return {"version": PLAN_VERSION, "input_shape": list(self.input_shape), "frac_bits": self.frac_bits,
                "steps": steps}

    @classmethod
    def from_meta(cls, doc: dict) -> "Plan":
        if doc.get("version") != PLAN_VERSION:
            raise ModelFormatError("unsupported model metadata version")
        steps = []
        for s in doc["steps"]:
            if s["type"] == "linear":
                steps.append(LinearStep(-1, tuple(s["in_shape"]), tuple(s["out_shape"]), tuple(s["length"]), s["padding"]))
            elif s["type"] == "block":
                steps.append(BlockStep((), tuple(s["in_shape"]), tuple(s["out_shape"]), tuple((k, int(z)) for k, z in s["ops"])))
            elif s["type"] in ("softmax", "argmax"):
                steps.append(FinalStep(int(s["K"]), s["type"], s.get("l")))
            else:
                raise ModelFormatError(f"unknown step {s['type']!r}")
        return cls(tuple(doc["input_shape"]), int(doc["frac_bits"]), steps)

    def public_equal(self, other: "Plan") -> bool:
        return self.to_meta() == other.to_meta()


_POOL_KIND = {MaxPool: "maxpool", MeanPool: "meanpool", FusedMaxPoolReLU: "fused"}


def compile_plan(model: ModelDescriptor, accuracy: int | None = None, argmax_only: bool = False,
                 p: int = DEFAULT_P) -> Plan:
    layers = model.layers
    if not isinstance(layers[0], LINEAR):
        raise ModelFormatError("the secure pipeline needs a linear first layer")
    shapes = model.shapes
    lin = [i for i, l in enumerate(layers) if isinstance(l, LINEAR)]
    steps: list = []
    i = 0
    while i < len(layers):
        layer = layers[i]
        if isinstance(layer, LINEAR):
            conv = as_conv(layer, shapes[i])
            g = ConvGeometry.for_layer(conv, shapes[i], p)
            steps.append(LinearStep(i, g.in_shape, g.out_shape, g.length, g.padding))
            i += 1
            if i - 1 == lin[-1]:
                break
            ops, start = [], i
            while i < len(layers) and not isinstance(layers[i], LINEAR):
                nl = layers[i]
                if isinstance(nl, ReLU):
                    ops.append(("relu", 1))
                else:
                    c, w, h = shapes[i]
                    if nl.step != nl.size or w % nl.size or h % nl.size:
                        raise ModelFormatError(f"layer {i}: secure pooling needs non-overlapping regions that tile the plane")
                    if isinstance(nl, MeanPool) and nl.region & (nl.region - 1):
                        raise ModelFormatError(f"layer {i}: secure mean pooling needs a power-of-two region")
                    ops.append((_POOL_KIND[type(nl)], nl.size))
                i += 1
            steps.append(BlockStep(tuple(range(start, i)), tuple(shapes[start]), tuple(shapes[i]), tuple(ops)))
        else:
            i += 1
    if any(not isinstance(l, Softmax) for l in layers[lin[-1] + 1:]):
        raise ModelFormatError("only softmax may follow the final fully connected layer")
    K = model.num_classes
    sm = model.softmax
    if sm is None or argmax_only:
        steps.append(FinalStep(K, "argmax"))
    else:
        steps.append(FinalStep(K, "softmax", int(accuracy if accuracy is not None else sm.l)))
    return Plan(tuple(model.input_shape), model.frac_bits, steps)


def plan_circuits(plan: Plan, p: int = DEFAULT_P) -> list[CircuitGraph]:
    """Circuits in protocol order: one per block, then the final step's circuit(s)."""
    out = []
    for k, s in enumerate(plan.steps):
        if isinstance(s, BlockStep):
            out.append(block_circuit(s.N, s.stages(), p, plan.frac_bits, name=f"block{k}"))
    cfg = plan.softmax_config()
    if cfg is None:
        out.append(argmax_circuit(plan.final.K, p))
    else:
        out += [argmax_renormalize_circuit(cfg, p), denominator_circuit(cfg)]
    return out


def fuse_layers(model: ModelDescriptor) -> ModelDescriptor:
    """ReLU followed (or preceded) by a max pool becomes one fused layer."""
    out, i, L = [], 0, model.layers
    while i < len(L):
        a = L[i]
        b = L[i + 1] if i + 1 < len(L) else None
        if isinstance(a, ReLU) and type(b) is MaxPool:
            out.append(FusedMaxPoolReLU(b.size, b.stride))
            i += 2
        elif type(a) is MaxPool and isinstance(b, ReLU):
            out.append(FusedMaxPoolReLU(a.size, a.stride))
            i += 2
        else:
            out.append(a)
            i += 1
    return ModelDescriptor(model.input_shape, out, model.frac_bits, quantized=model.quantized)


def unfuse_layers(model: ModelDescriptor) -> ModelDescriptor:
    out = []
    for a in model.layers:
        if isinstance(a, FusedMaxPoolReLU):
            out += [ReLU(), MaxPool(a.size, a.stride)]
        else:
            out.append(a)
    return ModelDescriptor(model.input_shape, out, model.frac_bits, quantized=model.quantized)
