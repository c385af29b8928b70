import json
from pathlib import Path

import numpy as np
import pytest

from falcon_pi.fixed_point import FixedPointOverflow
from falcon_pi.model import (
    FC, Conv, FusedMaxPoolReLU, MaxPool, MeanPool, ModelDescriptor, ModelFormatError, ReLU, Softmax,
    load_image, load_model, save_image, save_model,
)
from falcon_pi.reference import (
    conv_forward, dequantize, fixed_point_forward, plain_forward, pool_regions, quantize,
    quantize_image, trace_bytes,
)

FIX = Path(__file__).parent / "fixtures"


def naive_conv(x, w, b, padding):
    c, W, H = x.shape
    k, _, fw, fh = w.shape
    if padding == "valid":
        pw = ph = 0
        ow, oh = W - fw + 1, H - fh + 1
    else:
        pw, ph = (fw - 1) // 2, (fh - 1) // 2
        ow, oh = W, H
    out = np.zeros((k, ow, oh))
    for j in range(k):
        for u in range(ow):
            for v in range(oh):
                acc = b[j]
                for ch in range(c):
                    for a in range(fw):
                        for bb in range(fh):
                            i, jj = u + a - pw, v + bb - ph
                            if padding == "circular":
                                acc += w[j, ch, a, bb] * x[ch, i % W, jj % H]
                            elif 0 <= i < W and 0 <= jj < H:
                                acc += w[j, ch, a, bb] * x[ch, i, jj]
                out[j, u, v] = acc
    return out


def toy_model(g, shape=(2, 8, 8), classes=4, pool=FusedMaxPoolReLU):
    c = shape[0]
    return ModelDescriptor(shape, [
        Conv(g.uniform(-0.5, 0.5, (3, c, 3, 3)), g.uniform(-0.2, 0.2, 3)),
        pool(2),
        Conv(g.uniform(-0.5, 0.5, (2, 3, 3, 3)), g.uniform(-0.2, 0.2, 2)),
        ReLU(),
        FC(g.uniform(-0.5, 0.5, (classes, 2 * (shape[1] // 2) * (shape[2] // 2))), g.uniform(-0.2, 0.2, classes)),
        Softmax(),
    ], 8)


@pytest.mark.parametrize("padding", ["same", "valid", "circular"])
def test_conv_matches_naive_loops(padding):
    g = np.random.default_rng(3)
    for fw, fh in [(1, 1), (3, 3), (2, 3), (5, 5)]:
        x = g.normal(size=(2, 7, 6))
        w, b = g.normal(size=(3, 2, fw, fh)), g.normal(size=3)
        conv = Conv(w, b, padding)
        assert np.allclose(conv_forward(x, conv), naive_conv(x, w, b, padding))


def test_impulse_filter_and_identity_fc_select_pixels():
    g = np.random.default_rng(0)
    img = g.normal(size=(1, 3, 3))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1
    model = ModelDescriptor((1, 3, 3), [Conv(w, np.zeros(1)), FC(np.eye(9), np.zeros(9))])
    assert np.allclose(plain_forward(model, img).logits, img.reshape(-1))


def test_relu_example():
    model = ModelDescriptor((2, 1, 1), [ReLU(), FC(np.eye(2), np.zeros(2))])
    res = plain_forward(model, np.array([-1.0, 2.0]).reshape(2, 1, 1))
    assert res.logits.tolist() == [0.0, 2.0]
    assert res.t == 1 and res.probability is None


def test_hand_computed_toy_logits():
    h = json.loads((FIX / "hand_toy.json").read_text())
    model = ModelDescriptor((1, 2, 2), [
        Conv(np.full((1, 1, 1, 1), h["conv_weight"]), np.array([h["conv_bias"]])),
        ReLU(),
        FC(np.array(h["fc_weights"], float), np.array(h["fc_bias"])),
        Softmax(),
    ])
    res = plain_forward(model, np.array(h["image"], float))
    assert res.logits.tolist() == h["logits"]
    assert res.t == 0
    assert res.probability == pytest.approx(np.exp(3) / (np.exp(3) + 1))


def test_shape_mismatch_rejected():
    model = ModelDescriptor((1, 2, 2), [FC(np.eye(4), np.zeros(4))])
    with pytest.raises(ValueError):
        plain_forward(model, np.zeros((1, 3, 3)))
    with pytest.raises(ValueError):
        fixed_point_forward(model, np.zeros((2, 2, 2), dtype=np.int64))


def test_pooling_float_and_exact():
    x = np.arange(16, dtype=np.int64).reshape(1, 4, 4) - 7
    assert pool_regions(x.shape, 2).tolist()[0] == [0, 1, 4, 5]
    from falcon_pi.reference import pool_forward
    assert pool_forward(x, MaxPool(2)).reshape(-1).tolist() == [-2, 0, 6, 8]
    assert pool_forward(x, FusedMaxPoolReLU(2)).reshape(-1).tolist() == [0, 0, 6, 8]
    # floor semantics: mean of -7,-6,-3,-2 is -4.5, floored to -5
    assert pool_forward(x, MeanPool(2), exact=True).reshape(-1).tolist() == [-5, -3, 3, 5]
    assert pool_forward(x.astype(float), MeanPool(2)).reshape(-1).tolist() == [-4.5, -2.5, 3.5, 5.5]


def test_quantize_examples():
    model = ModelDescriptor((1, 1, 2), [FC(np.array([[0.5, 0.0]]), np.array([0.0]))])
    q = quantize(model, 8)
    assert q.layers[0].weights.tolist() == [[128, 0]]
    assert q.layers[0].bias.tolist() == [0]
    with pytest.raises(FixedPointOverflow):
        quantize(ModelDescriptor((1, 1, 1), [FC(np.array([[1e7]]), np.zeros(1))]), 8)


def test_random_model_dequantization_error():
    g = np.random.default_rng(5)
    model = toy_model(g)
    back = dequantize(quantize(model))
    for a, b in zip(model.layers, back.layers):
        if isinstance(a, Conv | FC):
            assert np.abs(a.weights - b.weights).max() <= 2.0**-9


def test_zero_image_gives_bias_chain():
    g = np.random.default_rng(8)
    model = quantize(ModelDescriptor((1, 4, 4), [
        Conv(g.uniform(-1, 1, (2, 1, 3, 3)), g.uniform(-1, 1, 2)),
        ReLU(),
        FC(g.uniform(-1, 1, (3, 32)), g.uniform(-1, 1, 3)),
    ]))
    s = model.frac_bits
    res, _ = fixed_point_forward(model, np.zeros((1, 4, 4), dtype=np.int64))
    hidden = np.repeat(np.maximum(model.layers[0].bias >> s, 0), 16)
    expect = model.layers[2].weights @ hidden + model.layers[2].bias
    assert np.array_equal(res.logits * 2.0 ** (2 * s), expect)


def test_golden_trace_fixture():
    model = load_model(FIX / "toy_cnn.json")
    img = np.fromfile(FIX / "toy_image.bin", dtype="<i8").reshape(model.input_shape)
    res, trace = fixed_point_forward(model, img)
    assert trace_bytes(trace) == (FIX / "toy_trace.bin").read_bytes()
    logits = json.loads((FIX / "toy_logits.json").read_text())["logits"]
    assert np.array_equal(res.logits * 2.0**16, logits)
    assert res.t == int(np.argmax(logits))


def test_overflow_reports_layer_index():
    model = quantize(ModelDescriptor((1, 1, 1), [FC(np.array([[100.0]]), np.zeros(1)), ReLU(),
                                                 FC(np.array([[100.0]]), np.zeros(1))]))
    with pytest.raises(FixedPointOverflow, match="layer 2"):
        fixed_point_forward(model, np.array([[[2 * 256]]]))


def test_argmax_and_fidelity_on_random_models():
    g = np.random.default_rng(11)
    tol = 2.0 ** (-8 + 3)
    checked = 0
    for _ in range(100):
        model = toy_model(g)
        img = g.uniform(-1, 1, model.input_shape)
        plain = plain_forward(model, img)
        qmodel, qimg = quantize(model), quantize_image(img, 8)
        fixed, _ = fixed_point_forward(qmodel, qimg)
        # integer arithmetic against floating point on the same quantized weights and input
        same = plain_forward(dequantize(qmodel), qimg / 256.0)
        assert np.abs(same.logits - fixed.logits).max() < tol
        top2 = np.sort(plain.logits)[-2:]
        if top2[1] - top2[0] >= 2 * tol:
            assert fixed.t == plain.t
            checked += 1
    assert checked > 50


def test_model_and_image_roundtrip(tmp_path):
    g = np.random.default_rng(2)
    model = quantize(toy_model(g, pool=MeanPool))
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert [type(a) for a in back.layers] == [type(a) for a in model.layers]
    for a, b in zip(model.layers, back.layers):
        if isinstance(a, Conv | FC):
            assert np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)
    img = quantize_image(g.uniform(-1, 1, (2, 8, 8)), 8)
    save_image(tmp_path / "x.bin", img)
    assert np.array_equal(load_image(tmp_path / "x.bin"), img)
    raw = (tmp_path / "x.bin").read_bytes()
    assert raw[:12] == (8).to_bytes(4, "little") * 2 + (2).to_bytes(4, "little")


def test_unknown_layer_rejected(tmp_path):
    doc = json.loads((FIX / "toy_cnn.json").read_text())
    doc["layers"][1]["type"] = "dropout"
    doc["weights"] = str((FIX / "toy_cnn.weights").resolve())
    (tmp_path / "m.json").write_text(json.dumps(doc))
    with pytest.raises(ModelFormatError, match="dropout"):
        load_model(tmp_path / "m.json")
    with pytest.raises(ModelFormatError):
        ModelDescriptor((1, 1, 1), [object(), FC(np.eye(1), np.zeros(1))])
    with pytest.raises(ModelFormatError):
        ModelDescriptor((1, 1, 1), [FC(np.eye(1), np.zeros(1)), ReLU()])
