import numpy as np
import pytest

from falcon_pi import DEFAULT_P
from falcon_pi._rng import Prng
from falcon_pi.gc.circuit import CircuitError, gate_count, simd_cost
from falcon_pi.gc.local import run_local
from falcon_pi.layers.circuits import (
    PoolStage, bias_share, block_circuit, block_mask_input, fused_cost, fused_maxpool_relu_circuit,
    fused_savings, layer_cost, maxpool_circuit, maxpool_cost, meanpool_circuit,
    output_reshare_circuit, preprocess_shares_circuit, preprocessing_cost, relu_circuit, relu_cost,
    relu_reduction, unbias,
)
from falcon_pi.layers.linear import (
    ConvGeometry, LayoutMismatch, PackingLayout, ServerContext, client_conv_output,
    client_decode, ct_from_shares, encrypt_planes, encrypt_share, fc_to_conv, input_ciphertext_count,
    prepare_filters, secure_conv_general, secure_conv_simple, secure_linear_inprocess, shares_from_ct,
)
from falcon_pi.layers.shares import (
    CLIENT, SERVER, AdditiveShareTensor, ShareError, mean_pool_local, mean_pool_local_1d, reconstruct,
    rescale_shares, share,
)
from falcon_pi.model import FC, Conv, FusedMaxPoolReLU, MaxPool, MeanPool, ReLU
from falcon_pi.reference import conv_forward, fc_forward, pool_regions
from falcon_pi.spectral import ModularFourier, circular_conv_oracle

P = DEFAULT_P
H = P // 2


def run(circ, **inputs):
    return {k: np.asarray(v, dtype=np.int64) for k, v in circ.evaluate(inputs).items()}


def signed(v):
    v = np.asarray(v, dtype=np.int64) % P
    return np.where(v > H, v - P, v)


@pytest.fixture
def ctx(he_params, keys):
    return ServerContext(he_params, keys.public, Prng(7, "server"))


# ---------------------------------------------------------------------------
# shares


def test_share_reconstruction_small_modulus():
    c = AdditiveShareTensor([3], CLIENT, 11)
    s = AdditiveShareTensor([7], SERVER, 11)
    assert reconstruct(c, s, signed=False).tolist() == [10]
    with pytest.raises(ShareError):
        reconstruct(c, AdditiveShareTensor([7], CLIENT, 11))


def test_share_split_uniform_and_exact():
    x = np.arange(-50, 50).reshape(4, 5, 5)
    c, s = share(x, Prng(1, "t"))
    assert np.array_equal(reconstruct(c, s), x)


def test_mean_pool_local_examples():
    m = lambda v, role: mean_pool_local_1d(AdditiveShareTensor(v, role), 2).data.tolist()
    assert m([6, 2], CLIENT) == [4] and m([4, 0], SERVER) == [2]
    # the true mean of {4, 0} is 2; local flooring reconstructs 1
    assert m([3, 0], CLIENT) == [1] and m([1, 0], SERVER) == [0]
    z = AdditiveShareTensor(np.zeros((2, 4, 4)), CLIENT)
    assert not mean_pool_local(z, 2).data.any()
    with pytest.raises(ShareError):
        mean_pool_local(AdditiveShareTensor(np.zeros((1, 3, 4)), CLIENT), 2)


def test_mean_pool_local_error_bound():
    g = np.random.default_rng(0)
    x = g.integers(-1000, 1000, (2, 8, 8))
    c, s = share(x, Prng(2, "t"))
    got = reconstruct(mean_pool_local(c, 2), mean_pool_local(s, 2))
    exact = x.reshape(2, 4, 2, 4, 2).sum(axis=(2, 4)) / 4
    err = got - exact
    # one unit per party of floor error, unless the signed shares wrap mod p
    wrapped = np.abs(err) > 2
    assert (np.abs(err[~wrapped]) <= 2).all()


def test_local_rescale_error_and_wrap():
    x = np.array([1000])
    c = AdditiveShareTensor(x - 5, CLIENT)
    s = AdditiveShareTensor([5], SERVER)
    assert abs(int(reconstruct(rescale_shares(c, 8), rescale_shares(s, 8))[0]) - (1000 >> 8)) <= 1
    # shares whose signed sum leaves (-p/2, p/2]: local flooring is off by about p / 2^8
    s = AdditiveShareTensor([H - 10], SERVER)
    c = AdditiveShareTensor((-x - (H - 10)) % P, CLIENT)
    bad = reconstruct(rescale_shares(c, 8), rescale_shares(s, 8))[0]
    assert abs(int(bad) - (-1000 >> 8)) > P // 2**9


# ---------------------------------------------------------------------------
# ciphertext <-> shares


def _geom(shape, pad="valid", f=1):
    return ConvGeometry.for_layer(Conv(np.zeros((1, shape[0], f, f)), np.zeros(1), pad), shape)


def test_ct_from_shares_examples(he_params, keys, ctx):
    geom = _geom((1, 1, 2))
    ct = ct_from_shares(AdditiveShareTensor([[[3, 5]]], CLIENT), AdditiveShareTensor([[[7, 0]]], SERVER),
                        geom, he_params, keys.public, ctx)
    assert geom.window(client_decode(ct, keys.secret)).tolist() == [[[10, 5]]]
    ct = ct_from_shares(AdditiveShareTensor([[[4, P - 1]]], CLIENT), AdditiveShareTensor([[[0, 0]]], SERVER),
                        geom, he_params, keys.public, ctx)
    assert geom.window(client_decode(ct, keys.secret)).tolist() == [[[4, P - 1]]]
    with pytest.raises(LayoutMismatch):
        ct_from_shares(AdditiveShareTensor([[[1]]], CLIENT), AdditiveShareTensor([[[1, 2]]], SERVER),
                       geom, he_params, keys.public, ctx)


def test_ct_from_shares_random(he_params, keys, ctx):
    g = np.random.default_rng(3)
    geom = _geom((2, 4, 4))
    for t in range(100):
        xc, xs = g.integers(0, P, (2, 4, 4)), g.integers(0, P, (2, 4, 4))
        ct = ct_from_shares(AdditiveShareTensor(xc, CLIENT), AdditiveShareTensor(xs, SERVER), geom,
                            he_params, keys.public, ctx)
        assert np.array_equal(geom.window(client_decode(ct, keys.secret)), (xc + xs) % P)


def test_shares_from_ct(he_params, keys, ctx):
    g = np.random.default_rng(4)
    geom = _geom((1, 8, 8))
    y = g.integers(-10**6, 10**6, (1, 8, 8))
    ct = encrypt_share(y, geom, he_params, keys.public)
    c, s = shares_from_ct(ct, ctx, keys.secret)
    assert np.array_equal(reconstruct(c, s), y)
    assert not np.array_equal(c.data % P, y % P)
    c, s = shares_from_ct(ct, ctx, keys.secret, zero_mask=True)
    assert np.array_equal(c.data, y % P) and not s.data.any()


# ---------------------------------------------------------------------------
# convolution


def _plane_ct(x, he_params, keys):
    x = np.asarray(x)[None]
    fr, fi = ModularFourier(*x.shape[1:]).forward(x % P)
    return encrypt_planes(fr, fi, PackingLayout(1, x.shape[1:], he_params.n), he_params, keys.public)


def test_secure_conv_simple_examples(he_params, keys, ctx):
    ct = _plane_ct([[1, 2], [3, 4]], he_params, keys)
    ctx.log.clear()
    m, mask = secure_conv_simple(ct, [[1, 0], [0, 1]], ctx)
    assert (ctx.log["SIMDMul"], ctx.log["SIMDAdd"], ctx.log["Rotate"]) == (4, 2, 0)
    assert ((client_decode(m, keys.secret) + mask.r) % P).tolist() == [[[5, 5], [5, 5]]]
    g = np.random.default_rng(1)
    x = g.integers(-500, 500, (8, 8))
    imp = np.zeros((8, 8), dtype=np.int64)
    imp[0, 0] = 1
    m, mask = secure_conv_simple(_plane_ct(x, he_params, keys), imp, ctx)
    assert np.array_equal(signed(client_decode(m, keys.secret) + mask.r)[0], x)
    f = g.integers(-500, 500, (8, 8))
    m, mask = secure_conv_simple(_plane_ct(x, he_params, keys), f, ctx)
    assert np.array_equal(signed(client_decode(m, keys.secret) + mask.r)[0], circular_conv_oracle(x, f))


def test_conv_general_reduces_to_simple(he_params, keys, ctx):
    g = np.random.default_rng(2)
    x = g.integers(-500, 500, (1, 8, 8))
    w = g.integers(-100, 100, (1, 1, 8, 8))
    conv = Conv(w, np.zeros(1), "circular")
    geom = ConvGeometry.for_layer(conv, x.shape)
    plane = geom.filter_planes(conv)[0, 0]
    ct = encrypt_share(x, geom, he_params, keys.public)
    m, mask = secure_conv_simple(ct, plane, ctx)
    simple = (client_decode(m, keys.secret) + mask.r) % P
    ctx.log.clear()
    outs, s = secure_conv_general(ct, prepare_filters(conv, geom, he_params), ctx)
    assert (ctx.log["SIMDMul"], ctx.log["SIMDAdd"]) == (4, 2)
    general = (client_conv_output(outs, geom, keys.secret).data + s.data) % P
    assert np.array_equal(general, simple)
    assert np.array_equal(signed(general), conv_forward(x, conv))


def test_packing_counts():
    assert input_ciphertext_count((128, 16, 16), 2048) == 32
    lay = PackingLayout(128, (16, 16), 2048)
    assert lay.groups == 16 and lay.ciphertexts == 32
    planes = np.arange(128 * 256).reshape(128, 16, 16)
    assert np.array_equal(lay.unpack(lay.pack(planes)), planes)
    assert PackingLayout(3, (16, 16), 2048).groups == 1


@pytest.mark.parametrize("pad", ["same", "valid", "circular"])
def test_multichannel_conv_matches_oracle(pad, he_params, keys, ctx):
    g = np.random.default_rng(5)
    x = g.integers(-1000, 1000, (3, 4, 4))
    conv = Conv(g.integers(-256, 256, (2, 3, 3, 3)), g.integers(-10**5, 10**5, 2), pad)
    xc, xs = share(x, Prng(9, "x"))
    c, s = secure_linear_inprocess(conv, xc, xs, he_params, keys, ctx)
    assert np.array_equal(reconstruct(c, s), conv_forward(x, conv))
    assert ctx.log["Rotate"] == 0


def test_same_geometry_hides_filter_size():
    shape = (1, 8, 8)
    lengths = {ConvGeometry.for_layer(Conv(np.zeros((1, 1, f, f)), np.zeros(1)), shape).length for f in (1, 3, 5, 7)}
    assert lengths == {(16, 16)}


def test_fc_to_conv_structure_and_values(he_params, keys, ctx):
    fc = FC(np.arange(12).reshape(3, 4), np.zeros(3))
    conv = fc_to_conv(fc, (1, 2, 2))
    assert conv.weights.shape == (3, 1, 2, 2) and conv.out_shape((1, 2, 2)) == (3, 1, 1)
    with pytest.raises(ValueError):
        fc_to_conv(fc, (1, 3, 3))
    x = np.array([[[5, 6], [7, 8]]])
    sel = FC(np.eye(4)[[2, 0, 1]], np.zeros(3))
    assert conv_forward(x, fc_to_conv(sel, x.shape)).reshape(-1).tolist() == [7, 5, 6]
    g = np.random.default_rng(6)
    fc = FC(g.integers(-256, 256, (5, 32)), g.integers(-10**5, 10**5, 5))
    x = g.integers(-1000, 1000, (2, 4, 4))
    assert np.array_equal(conv_forward(x, fc_to_conv(fc, x.shape)), fc_forward(x, fc))
    xc, xs = share(x, Prng(3, "x"))
    c, s = secure_linear_inprocess(fc, xc, xs, he_params, keys, ctx)
    assert np.array_equal(reconstruct(c, s), fc_forward(x, fc))


# ---------------------------------------------------------------------------
# circuits


def test_preprocess_examples():
    c = preprocess_shares_circuit(3, 11)
    out = run(c, x_c=[7, 3, 0], x_s=[9, 4, 0])["x"]
    assert out.tolist() == [5, 7, 0]
    # the boundary the printed comparison gets wrong: x_c + x_s = p
    assert run(c, x_c=[5, 10, 6], x_s=[6, 10, 4])["x"].tolist() == [0, 9, 10]
    with pytest.raises(CircuitError):
        preprocess_shares_circuit(3, 11, width=4)


def test_relu_examples():
    assert run(relu_circuit(3, 11), x=[4, 7, 5])["y"].tolist() == [4, 0, 5]


def test_maxpool_examples():
    assert run(maxpool_circuit(8, 4), x=[3, 1, 4, 2, 6, 6, 6, 6])["y"].tolist() == [4, 6]
    g = np.random.default_rng(0)
    x = g.integers(0, H, 16)
    assert np.array_equal(run(maxpool_circuit(16, 4), x=x)["y"], x.reshape(4, 4).max(1))
    with pytest.raises(CircuitError):
        maxpool_circuit(10, 4)


def test_fused_examples():
    c = fused_maxpool_relu_circuit(4, 2, 11)
    x = np.array([3, 9, 9, 8])
    out = unbias(run(c, x=bias_share(x, 11))["y"], 11)
    assert out.tolist() == [3, 0]
    with pytest.raises(CircuitError):
        fused_maxpool_relu_circuit(6, 4)


def test_fused_equals_relu_then_maxpool():
    g = np.random.default_rng(1)
    k, n = 4, 4000
    y = g.integers(-H, H + 1, n)
    y[: n // 4] = g.integers(-3, 4, n // 4)
    res = y % P
    composed = run(maxpool_circuit(n, k), x=run(relu_circuit(n, P), x=res)["y"])["y"]
    fused = unbias(run(fused_maxpool_relu_circuit(n, k), x=bias_share(res))["y"])
    assert np.array_equal(fused, composed)
    assert np.array_equal(fused, np.maximum(y.reshape(-1, k).max(1), 0))


def test_meanpool_circuit_floors():
    y = np.array([-7, -6, -3, -2, 1, 2, 3, 5])
    out = unbias(run(meanpool_circuit(8, 4), x=bias_share(y % P))["y"])
    assert out.tolist() == [-5, 2]


def test_output_reshare():
    c = output_reshare_circuit(2, 11)
    assert run(c, y=[4, 4], r_neg=[(-9) % 11, 0])["y_c"].tolist() == [6, 4]
    g = np.random.default_rng(2)
    y, r = g.integers(0, P, 1000), g.integers(0, P, 1000)
    out = run(output_reshare_circuit(1000), y=y, r_neg=(-r) % P)["y_c"]
    assert np.array_equal((out + r) % P, y)


def test_listing_circuits_garbled_match_cleartext():
    g = np.random.default_rng(3)
    N, k = 8, 4
    cases = [
        (preprocess_shares_circuit(N), lambda: ({"x_s": g.integers(0, P, N)}, {"x_c": g.integers(0, P, N)})),
        (relu_circuit(N), lambda: ({}, {"x": g.integers(0, P, N)})),
        (maxpool_circuit(N, k), lambda: ({}, {"x": g.integers(0, H, N)})),
        (fused_maxpool_relu_circuit(N, k), lambda: ({}, {"x": g.integers(0, P, N)})),
        (output_reshare_circuit(N), lambda: ({"r_neg": g.integers(0, P, N)}, {"y": g.integers(0, P, N)})),
    ]
    for circ, draw in cases:
        for t in range(100):
            gi, ei = draw()
            want = run(circ, **gi, **ei)
            _, got = run_local(circ, gi, ei, seed=t)
            for name, v in want.items():
                assert np.array_equal(np.asarray(got[name], dtype=np.int64), v), (circ.name, t)


# ---------------------------------------------------------------------------
# costs


def test_measured_costs_match_formulas():
    N, k = 64, 4
    assert gate_count(preprocess_shares_circuit(N)).cost == preprocessing_cost(N) == simd_cost((4, N))
    assert gate_count(relu_circuit(N)).cost == relu_cost(N) == simd_cost((2, N))
    assert gate_count(maxpool_circuit(N, k)).cost == maxpool_cost(N, k) == simd_cost((k - 1, N // k), subset=1)
    assert gate_count(fused_maxpool_relu_circuit(N, k)).cost == fused_cost(N, k) == simd_cost((k + 1, N // k), subset=1)
    assert gate_count(output_reshare_circuit(N)).cost == simd_cost((4, N))


def test_layer_cost_examples():
    N = 1024
    assert layer_cost(FusedMaxPoolReLU(2), N) == simd_cost((5, N // 4), subset=1)
    unfused = layer_cost(ReLU(), N) + layer_cost(MaxPool(2), N)
    assert unfused == simd_cost((2, N), (3, N // 4), subset=1)
    assert fused_savings(N, 4) == simd_cost((2, N)) - simd_cost((2, N // 4))
    assert relu_reduction(4) == 0.75
    assert layer_cost(Conv(np.zeros((1, 1, 1, 1)), np.zeros(1)), N).units == 0
    assert layer_cost(MeanPool(2), N) == simd_cost((3, N // 4), subset=1)


def test_block_preprocesses_once_and_costs_add_up():
    shape = (2, 4, 4)
    N = 32
    reg = tuple(map(tuple, pool_regions(shape, 2)))
    unfused = block_circuit(N, [PoolStage("relu"), PoolStage("maxpool", reg)])
    fused = block_circuit(N, [PoolStage("fused", reg)])
    fixed = preprocessing_cost(N) + simd_cost((1, N)) + simd_cost((4, N // 4))
    assert gate_count(unfused).cost == fixed + relu_cost(N) + maxpool_cost(N, 4)
    assert gate_count(fused).cost == fixed + fused_cost(N, 4)
    assert gate_count(unfused).cost - gate_count(fused).cost == fused_savings(N, 4)


# ---------------------------------------------------------------------------
# end-to-end layer equivalence


def _block_trial(g, stages_fn, shape, ref_fn, garbled=False, seed=0):
    N = int(np.prod(shape))
    y = g.integers(-2**22, 2**22, shape)
    xc, xs = share(y, Prng(seed, "in"))
    stages, out_shape = stages_fn(shape)
    circ = block_circuit(N, stages)
    r = g.integers(0, P, int(np.prod(out_shape)))
    gi = {"x_s": xs.data.reshape(-1), "r_neg": block_mask_input(r)}
    ei = {"x_c": bias_share(xc.data.reshape(-1))}
    out = run_local(circ, gi, ei, seed=seed)[1]["y_c"] if garbled else run(circ, **gi, **ei)["y_c"]
    got = signed(np.asarray(out, dtype=np.int64) + r).reshape(out_shape)
    assert np.array_equal(got, ref_fn(y >> 8))


def _pool(kind, ref):
    def stages(shape):
        c, w, h = shape
        return [PoolStage(kind, tuple(map(tuple, pool_regions(shape, 2))))], (c, w // 2, h // 2)

    def oracle(x):
        c, w, h = x.shape
        return ref(x.reshape(c, w // 2, 2, h // 2, 2))

    return stages, oracle


BLOCKS = {
    "rescale": (lambda s: ([], s), lambda x: x),
    "relu": (lambda s: ([PoolStage("relu")], s), lambda x: np.maximum(x, 0)),
    "maxpool": _pool("maxpool", lambda v: v.max(axis=(2, 4))),
    "fused": _pool("fused", lambda v: np.maximum(v.max(axis=(2, 4)), 0)),
    "meanpool": _pool("meanpool", lambda v: v.sum(axis=(2, 4)) // 4),
}


@pytest.mark.parametrize("kind", sorted(BLOCKS))
def test_block_equivalence_cleartext(kind):
    g = np.random.default_rng(hash(kind) % 2**32)
    stages, ref = BLOCKS[kind]
    for t in range(100):
        c = int(g.integers(1, 5))
        w, h = 2 * g.integers(1, 9, 2)
        _block_trial(g, stages, (c, int(w), int(h)), ref, seed=t)


@pytest.mark.parametrize("kind", sorted(BLOCKS))
def test_block_equivalence_garbled(kind):
    g = np.random.default_rng(7 + len(kind))
    stages, ref = BLOCKS[kind]
    for t in range(10):
        _block_trial(g, stages, (2, 4, 4), ref, garbled=True, seed=t)


def test_conv_layer_equivalence(he_params, keys, ctx):
    g = np.random.default_rng(8)
    for t in range(100):
        c = int(g.integers(1, 5))
        w, h = (int(v) for v in g.integers(2, 17, 2))
        pad = ["same", "valid"][t % 2]
        f = int(g.integers(1, min(w, h, 5) + 1))
        k = int(g.integers(1, 3))
        x = g.integers(-2**10, 2**10, (c, w, h))
        conv = Conv(g.integers(-256, 256, (k, c, f, f)), g.integers(-2**18, 2**18, k), pad)
        xc, xs = share(x, Prng(t, "x"))
        if t % 3 == 0:
            # first layer: the server holds no share and the client holds the input itself
            xc, xs = AdditiveShareTensor(x, CLIENT), None
        cs, ss = secure_linear_inprocess(conv, xc, xs, he_params, keys, ctx)
        assert np.array_equal(reconstruct(cs, ss), conv_forward(x, conv)), t
