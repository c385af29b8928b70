"""Layer specifications, model descriptors and the on-disk model and image formats.

Tensors are numpy arrays shaped (c, w, h).  Convolutions are CNN cross-correlations:
y[j, u, v] = sum_{i,a,b} x[i, u + a - P_w, v + b - P_h] * W[j, i, a, b] + bias[j].
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
PADDINGS = ("same", "valid", "circular")


class ModelFormatError(ValueError):
    pass


@dataclass(eq=False)
class Conv:
    weights: np.ndarray  # (k, c, f_w, f_h)
    bias: np.ndarray  # (k,)
    padding: str = "same"

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        self.bias = np.asarray(self.bias)
        if self.weights.ndim != 4:
            raise ValueError("conv weights must be (k, c, f_w, f_h)")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError("conv bias must have one entry per filter")
        if self.padding not in PADDINGS:
            raise ValueError(f"padding must be one of {PADDINGS}")

    @property
    def filters(self) -> int:
        return self.weights.shape[0]

    @property
    def kernel(self) -> tuple[int, int]:
        return self.weights.shape[2], self.weights.shape[3]

    def offsets(self) -> tuple[int, int]:
        if self.padding == "valid":
            return 0, 0
        fw, fh = self.kernel
        return (fw - 1) // 2, (fh - 1) // 2

    def out_shape(self, shape):
        c, w, h = shape
        k, ci, fw, fh = self.weights.shape
        if ci != c:
            raise ValueError(f"conv expects {ci} channels, got {c}")
        if fw > w or fh > h:
            raise ValueError("filter larger than input")
        if self.padding == "valid":
            return (k, w - fw + 1, h - fh + 1)
        return (k, w, h)


@dataclass(eq=False)
class FC:
    weights: np.ndarray  # (l_o, l_i)
    bias: np.ndarray  # (l_o,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        self.bias = np.asarray(self.bias)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError("FC weights must be (l_o, l_i) with l_o biases")

    def out_shape(self, shape):
        if math.prod(shape) != self.weights.shape[1]:
            raise ValueError(f"FC expects {self.weights.shape[1]} inputs, got shape {shape}")
        return (self.weights.shape[0], 1, 1)


@dataclass(frozen=True)
class ReLU:
    def out_shape(self, shape):
        return shape


@dataclass(frozen=True)
class _Pool:
    size: int = 2
    stride: int | None = None

    @property
    def step(self) -> int:
        return self.stride or self.size

    @property
    def region(self) -> int:
        return self.size * self.size

    def out_shape(self, shape):
        c, w, h = shape
        s, k = self.step, self.size
        if w < k or h < k:
            raise ValueError("pooling window larger than input")
        return (c, (w - k) // s + 1, (h - k) // s + 1)


@dataclass(frozen=True)
class MaxPool(_Pool):
    pass


@dataclass(frozen=True)
class MeanPool(_Pool):
    pass


@dataclass(frozen=True)
class FusedMaxPoolReLU(_Pool):
    pass


@dataclass(frozen=True)
class Softmax:
    l: int = 4

    def out_shape(self, shape):
        return shape


LINEAR = (Conv, FC)
POOLS = (MaxPool, MeanPool, FusedMaxPoolReLU)
LayerSpec = Conv | FC | ReLU | MaxPool | MeanPool | FusedMaxPoolReLU | Softmax


@dataclass(eq=False)
class ModelDescriptor:
    input_shape: tuple[int, int, int]
    layers: list
    frac_bits: int = 8
    version: int = FORMAT_VERSION
    quantized: bool = False
    _shapes: list = field(default=None, repr=False)

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.validate()

    def validate(self):
        shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            if not isinstance(layer, (Conv, FC, ReLU, MaxPool, MeanPool, FusedMaxPoolReLU, Softmax)):
                raise ModelFormatError(f"layer {i}: unknown layer type {type(layer).__name__}")
            if isinstance(layer, Softmax) and i != len(self.layers) - 1:
                raise ModelFormatError("softmax must be the last layer")
            try:
                shapes.append(layer.out_shape(shapes[-1]))
            except ValueError as exc:
                raise ModelFormatError(f"layer {i}: {exc}") from None
        body = [l for l in self.layers if not isinstance(l, Softmax)]
        if not body or not isinstance(body[-1], FC):
            raise ModelFormatError("the last linear layer must be fully connected")
        self._shapes = shapes

    @property
    def shapes(self) -> list:
        return self._shapes

    @property
    def num_classes(self) -> int:
        return self.shapes[-1][0]

    @property
    def softmax(self) -> Softmax | None:
        last = self.layers[-1]
        return last if isinstance(last, Softmax) else None


# ---------------------------------------------------------------------------
# file formats

_KIND = {Conv: "conv", FC: "fc", ReLU: "relu", MaxPool: "maxpool", MeanPool: "meanpool",
         FusedMaxPoolReLU: "fused_maxpool_relu", Softmax: "softmax"}


def save_model(model: ModelDescriptor, manifest: str | Path) -> None:
    """Write a JSON manifest and a sidecar of int64 little-endian fixed-point weights.

    Weights are stored at frac_bits, biases at 2 * frac_bits (the scale of a product).
    """
    manifest = Path(manifest)
    sidecar = manifest.with_suffix(".weights")
    s = model.frac_bits
    layers, blobs = [], []
    for layer in model.layers:
        entry = {"type": _KIND[type(layer)]}
        if isinstance(layer, (Conv, FC)):
            w, b = _fixed(layer.weights, s, model.quantized), _fixed(layer.bias, 2 * s, model.quantized)
            entry["weight_shape"] = list(w.shape)
            if isinstance(layer, Conv):
                entry["padding"] = layer.padding
            blobs += [w.reshape(-1), b.reshape(-1)]
        elif isinstance(layer, POOLS):
            entry["size"] = layer.size
            entry["stride"] = layer.step
        elif isinstance(layer, Softmax):
            entry["l"] = layer.l
        layers.append(entry)
    doc = {
        "format_version": FORMAT_VERSION,
        "frac_bits": s,
        "bias_frac_bits": 2 * s,
        "input_shape": list(model.input_shape),
        "layers": layers,
        "weights": sidecar.name,
    }
    manifest.write_text(json.dumps(doc, indent=2) + "\n")
    data = np.concatenate(blobs).astype("<i8") if blobs else np.zeros(0, "<i8")
    sidecar.write_bytes(data.tobytes())


def _fixed(arr, bits, already):
    arr = np.asarray(arr)
    if already:
        return arr.astype(np.int64)
    from .fixed_point import quantize_array

    return quantize_array(arr, bits)


def load_model(manifest: str | Path) -> ModelDescriptor:
    """Load a manifest; weights come back quantized (integers) with ``quantized=True``."""
    manifest = Path(manifest)
    try:
        doc = json.loads(manifest.read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"manifest is not valid JSON: {exc}") from None
    if doc.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {doc.get('format_version')}")
    s = int(doc["frac_bits"])
    if int(doc.get("bias_frac_bits", 2 * s)) != 2 * s:
        raise ModelFormatError("bias scale must be twice the weight scale")
    raw = np.frombuffer((manifest.parent / doc["weights"]).read_bytes(), dtype="<i8").astype(np.int64)
    off = 0
    layers = []
    for entry in doc["layers"]:
        kind = entry.get("type")
        if kind in ("conv", "fc"):
            shape = tuple(entry["weight_shape"])
            size = math.prod(shape)
            if off + size + shape[0] > raw.size:
                raise ModelFormatError("weight sidecar is too short")
            w = raw[off:off + size].reshape(shape)
            off += size
            b = raw[off:off + shape[0]]
            off += shape[0]
            layers.append(Conv(w, b, entry.get("padding", "same")) if kind == "conv" else FC(w, b))
        elif kind == "relu":
            layers.append(ReLU())
        elif kind in ("maxpool", "meanpool", "fused_maxpool_relu"):
            cls = {"maxpool": MaxPool, "meanpool": MeanPool, "fused_maxpool_relu": FusedMaxPoolReLU}[kind]
            layers.append(cls(int(entry["size"]), int(entry.get("stride", entry["size"]))))
        elif kind == "softmax":
            layers.append(Softmax(int(entry.get("l", 4))))
        else:
            raise ModelFormatError(f"unknown layer type {kind!r}")
    if off != raw.size:
        raise ModelFormatError("weight sidecar has trailing data")
    return ModelDescriptor(tuple(doc["input_shape"]), layers, s, quantized=True)


def save_image(path: str | Path, image: np.ndarray) -> None:
    """Raw image: (w, h, c) as uint32 LE, then int64 LE fixed-point values, channel-major."""
    image = np.asarray(image, dtype=np.int64)
    c, w, h = image.shape
    Path(path).write_bytes(struct.pack("<III", w, h, c) + image.astype("<i8").tobytes())


def load_image(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise ModelFormatError("image header truncated")
    w, h, c = struct.unpack_from("<III", raw)
    if len(raw) != 12 + 8 * w * h * c:
        raise ModelFormatError("image size does not match its header")
    return np.frombuffer(raw, dtype="<i8", offset=12).astype(np.int64).reshape(c, w, h)
