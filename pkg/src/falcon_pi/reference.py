"""Cleartext CNN engine: floating-point forward pass, quantization and the bit-exact
fixed-point forward pass that mirrors the secure pipeline's arithmetic."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import DEFAULT_P
from .fixed_point import FixedPointOverflow, quantize_array
from .model import (
    FC, Conv, FusedMaxPoolReLU, MaxPool, MeanPool, ModelDescriptor, ReLU, Softmax,
)


@dataclass
class PredictionResult:
    t: int
    probability: float | None = None
    logits: np.ndarray | None = None


def _pad(x: np.ndarray, conv: Conv) -> np.ndarray:
    if conv.padding == "valid":
        return x
    fw, fh = conv.kernel
    pw, ph = conv.offsets()
    widths = ((0, 0), (pw, fw - 1 - pw), (ph, fh - 1 - ph))
    return np.pad(x, widths, mode="wrap" if conv.padding == "circular" else "constant")


def conv_forward(x: np.ndarray, conv: Conv, weights=None, bias=None) -> np.ndarray:
    w = conv.weights if weights is None else weights
    b = conv.bias if bias is None else bias
    k, c, fw, fh = w.shape
    _, ow, oh = conv.out_shape(x.shape)
    xp = _pad(x, conv)
    dtype = np.result_type(x, w)
    y = np.zeros((k, ow, oh), dtype=dtype)
    for a in range(fw):
        for bb in range(fh):
            y += np.einsum("kc,cuv->kuv", w[:, :, a, bb], xp[:, a:a + ow, bb:bb + oh])
    return y + b.reshape(-1, 1, 1).astype(dtype)


def fc_forward(x: np.ndarray, fc: FC, weights=None, bias=None) -> np.ndarray:
    w = fc.weights if weights is None else weights
    b = fc.bias if bias is None else bias
    return (w @ x.reshape(-1) + b).reshape(-1, 1, 1)


def pool_regions(shape, size: int, stride: int | None = None) -> np.ndarray:
    """Flat (c, w, h) lane indices of each pooling window, shape (outputs, size * size)."""
    stride = stride or size
    c, w, h = shape
    ow, oh = (w - size) // stride + 1, (h - size) // stride + 1
    idx = np.arange(c * w * h).reshape(c, w, h)
    out = np.empty((c, ow, oh, size * size), dtype=np.int64)
    for u in range(ow):
        for v in range(oh):
            win = idx[:, u * stride:u * stride + size, v * stride:v * stride + size]
            out[:, u, v] = win.reshape(c, -1)
    return out.reshape(-1, size * size)


def pool_forward(x: np.ndarray, layer, exact: bool = False) -> np.ndarray:
    shape = layer.out_shape(x.shape)
    vals = x.reshape(-1)[pool_regions(x.shape, layer.size, layer.step)]
    if isinstance(layer, MeanPool):
        out = vals.sum(axis=1) // layer.region if exact else vals.mean(axis=1)
    else:
        out = vals.max(axis=1)
        if isinstance(layer, FusedMaxPoolReLU):
            out = np.maximum(out, 0)
    return out.reshape(shape)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def _dequantized(model: ModelDescriptor):
    if not model.quantized:
        return model
    return dequantize(model)


def plain_forward(model: ModelDescriptor, image) -> PredictionResult:
    model = _dequantized(model)
    x = np.asarray(image, dtype=np.float64)
    if x.shape != model.input_shape:
        raise ValueError(f"image shape {x.shape} does not match model input {model.input_shape}")
    for layer in model.layers:
        x = _float_layer(layer, x)
    logits = x.reshape(-1)
    t = int(np.argmax(logits))
    prob = float(softmax(logits)[t]) if model.softmax else None
    return PredictionResult(t, prob, logits)


def _float_layer(layer, x):
    if isinstance(layer, Conv):
        return conv_forward(x, layer)
    if isinstance(layer, FC):
        return fc_forward(x, layer)
    if isinstance(layer, ReLU):
        return np.maximum(x, 0)
    if isinstance(layer, (MaxPool, MeanPool, FusedMaxPoolReLU)):
        return pool_forward(x, layer)
    if isinstance(layer, Softmax):
        return x
    raise TypeError(f"unknown layer {layer!r}")


def quantize(model: ModelDescriptor, frac_bits: int | None = None, p: int = DEFAULT_P) -> ModelDescriptor:
    """Weights to integers at 2^frac_bits; biases at 2^(2 frac_bits), the scale of a product."""
    if model.quantized:
        return model
    s = model.frac_bits if frac_bits is None else frac_bits
    layers = []
    for layer in model.layers:
        if isinstance(layer, Conv):
            layers.append(Conv(quantize_array(layer.weights, s, p // 2), quantize_array(layer.bias, 2 * s, p // 2), layer.padding))
        elif isinstance(layer, FC):
            layers.append(FC(quantize_array(layer.weights, s, p // 2), quantize_array(layer.bias, 2 * s, p // 2)))
        else:
            layers.append(layer)
    return ModelDescriptor(model.input_shape, layers, s, quantized=True)


def dequantize(model: ModelDescriptor) -> ModelDescriptor:
    if not model.quantized:
        return model
    s = model.frac_bits
    layers = []
    for layer in model.layers:
        if isinstance(layer, Conv):
            layers.append(Conv(layer.weights / 2.0**s, layer.bias / 2.0 ** (2 * s), layer.padding))
        elif isinstance(layer, FC):
            layers.append(FC(layer.weights / 2.0**s, layer.bias / 2.0 ** (2 * s)))
        else:
            layers.append(layer)
    return ModelDescriptor(model.input_shape, layers, s)


def quantize_image(image, frac_bits: int, p: int = DEFAULT_P) -> np.ndarray:
    return quantize_array(image, frac_bits, p // 2)


def _check(v: np.ndarray, index: int, p: int):
    if v.size and int(np.abs(v).max()) >= p // 2:
        raise FixedPointOverflow(f"layer {index}: value exceeds the representable range mod p")


def fixed_point_forward(model: ModelDescriptor, image, p: int = DEFAULT_P):
    """Integer-exact forward pass.  Returns (PredictionResult, trace).

    Each non-final linear layer is followed by a floor division by 2^frac_bits; the final
    linear layer's output (the logits) stays at 2^(2 frac_bits).  Mean pooling floors.
    """
    model = quantize(model)
    s = model.frac_bits
    x = np.asarray(image, dtype=np.int64)
    if x.shape != model.input_shape:
        raise ValueError(f"image shape {x.shape} does not match model input {model.input_shape}")
    _check(x, -1, p)
    linear = [i for i, l in enumerate(model.layers) if isinstance(l, (Conv, FC))]
    trace = []
    for i, layer in enumerate(model.layers):
        if isinstance(layer, Conv):
            x = conv_forward(x, layer)
        elif isinstance(layer, FC):
            x = fc_forward(x, layer)
        elif isinstance(layer, ReLU):
            x = np.maximum(x, 0)
        elif isinstance(layer, (MaxPool, MeanPool, FusedMaxPoolReLU)):
            x = pool_forward(x, layer, exact=True)
        _check(x, i, p)
        if isinstance(layer, (Conv, FC)) and i != linear[-1]:
            x = x >> s
        if not isinstance(layer, Softmax):
            trace.append(x.astype(np.int64))
    logits_int = x.reshape(-1)
    logits = logits_int / 2.0 ** (2 * s)
    t = int(np.argmax(logits_int))
    prob = float(softmax(logits)[t]) if model.softmax else None
    return PredictionResult(t, prob, logits), trace


def trace_bytes(trace) -> bytes:
    return b"".join(np.asarray(v, dtype="<i8").tobytes() for v in trace)
