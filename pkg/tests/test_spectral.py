import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from falcon_pi.spectral import (
    FreqPlanes, ModularFourier, allowed_lengths, circular_conv_oracle, fft2d, ifft2d,
    pointwise_complex_mul, transform_length, zero_pad_filter,
)

P = 1316638721


def direct_dft(x):
    w, h = x.shape
    out = np.zeros((w, h), dtype=complex)
    for u in range(w):
        for v in range(h):
            for a in range(w):
                for b in range(h):
                    out[u, v] += x[a, b] * np.exp(-2j * np.pi * (u * a / w + v * b / h))
    return out


def test_impulse_and_constant():
    fp = fft2d([[1, 0], [0, 0]])
    assert (fp.real == 1).all() and (fp.imag == 0).all()
    fp = fft2d([[1, 1], [1, 1]])
    assert fp.real[0, 0] == 4 and (fp.real.ravel()[1:] == 0).all() and (fp.imag == 0).all()
    assert (fft2d([[1, 0], [0, 0]], frac_bits=8).real == 256).all()


def test_matches_direct_dft(rng):
    x = rng.uniform(-4, 4, (4, 4))
    for frac in (0, 8, 12):
        fp = fft2d(x, frac)
        ref = direct_dft(x) * (1 << frac)
        assert np.abs(fp.real - ref.real).max() <= 1
        assert np.abs(fp.imag - ref.imag).max() <= 1


def test_inverse_examples():
    assert np.allclose(ifft2d(fft2d([[1, 2], [3, 4]])), [[1, 2], [3, 4]])
    assert np.allclose(ifft2d(FreqPlanes(np.ones((2, 2)), np.zeros((2, 2)))), [[1, 0], [0, 0]])


def test_roundtrip_error(rng):
    frac = 8
    x = rng.uniform(-10, 10, (8, 8))
    err = np.abs(ifft2d(fft2d(x, frac)) - x).max()
    assert err <= 2.0 ** (-frac + 1)


def test_pointwise_identity_and_closure(rng):
    b = fft2d(rng.uniform(-3, 3, (4, 4)), 8)
    delta = fft2d(np.eye(1, 16).reshape(4, 4), 8)
    out = pointwise_complex_mul(delta, b)
    assert (out.real == b.real).all() and (out.imag == b.imag).all()
    a = FreqPlanes(rng.integers(-99, 99, (3, 3)), np.zeros((3, 3)), 8)
    c = FreqPlanes(rng.integers(-99, 99, (3, 3)), np.zeros((3, 3)), 8)
    assert (pointwise_complex_mul(a, c).imag == 0).all()
    with pytest.raises(ValueError):
        pointwise_complex_mul(a, b)


def test_convolution_example():
    x = [[1, 2], [3, 4]]
    f = [[1, 0], [0, 1]]
    assert np.allclose(ifft2d(pointwise_complex_mul(fft2d(x), fft2d(f))), [[5, 5], [5, 5]])
    assert (circular_conv_oracle(np.array(x), np.array(f)) == 5).all()


def test_oracle_identities(rng):
    x = rng.integers(-9, 9, (3, 5))
    imp = np.zeros((3, 5), dtype=np.int64)
    imp[0, 0] = 1
    assert (circular_conv_oracle(x, imp) == x).all()
    assert (circular_conv_oracle(x, np.zeros_like(x)) == 0).all()


def test_zero_pad():
    assert (zero_pad_filter([[5]], 2, 2) == [[5, 0], [0, 0]]).all()
    f = np.array([[1, 2], [3, 4]])
    assert (zero_pad_filter(f, 2, 2) == f).all()
    out = zero_pad_filter(f, 3, 3)
    assert np.count_nonzero(out) == 4 and out.size - np.count_nonzero(out) == 5
    with pytest.raises(ValueError):
        zero_pad_filter(f, 1, 3)


def test_linearity(rng):
    for _ in range(20):
        x, y = rng.uniform(-5, 5, (2, 6, 6))
        s = fft2d(x, 8)
        t = fft2d(y, 8)
        u = fft2d(x + y, 8)
        assert np.abs(s.real + t.real - u.real).max() <= 1
        assert np.abs(s.imag + t.imag - u.imag).max() <= 1


def test_convolution_theorem_float(rng):
    frac = 12
    for _ in range(100):
        w, h = rng.integers(1, 17, 2)
        fw, fh = rng.integers(1, w + 1), rng.integers(1, h + 1)
        x = rng.uniform(-2, 2, (w, h))
        f = rng.uniform(-1, 1, (fw, fh))
        got = ifft2d(pointwise_complex_mul(fft2d(x, frac), fft2d(zero_pad_filter(f, w, h), frac)))
        ref = circular_conv_oracle(x, zero_pad_filter(f, w, h))
        assert np.abs(got - ref).max() < 2.0 ** (-frac + 9)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 20), st.integers(1, 20))
def test_shape_preserved(w, h):
    assert fft2d(np.ones((w, h))).shape == (w, h)


def test_allowed_lengths():
    lengths = allowed_lengths(P)
    assert all((P - 1) % L == 0 for L in lengths)
    assert lengths[:10] == (1, 2, 4, 5, 8, 10, 16, 20, 32, 40)
    assert transform_length(23) == 32
    assert transform_length(17) == 20


@pytest.mark.parametrize("shape", [(1, 1), (2, 2), (4, 5), (8, 8), (10, 16)])
def test_modular_transform_exact(rng, shape):
    mf = ModularFourier(*shape, P)
    x = rng.integers(0, P, (3,) + shape)
    f = rng.integers(0, P, shape)
    xr, xi = mf.forward(x)
    back, im = mf.inverse(xr, xi)
    assert (back == x).all() and (im == 0).all()
    fr, fi = mf.forward(f)
    yr, yi = mf.pointwise(xr, xi, fr, fi)
    y, yim = mf.inverse(yr, yi)
    assert (yim == 0).all()
    for c in range(3):
        ref = circular_conv_oracle(x[c].astype(object), f.astype(object)) % P
        assert (y[c] == ref.astype(np.int64)).all()


def test_modular_transform_matches_complex_dft_on_small_ints(rng):
    # for a real odd-symmetric-free input, the mod-p transform agrees with the float DFT
    # wherever the float DFT is integral, e.g. at length 2 and 4
    x = rng.integers(-50, 50, (4, 4))
    mf = ModularFourier(4, 4, P)
    re, im = mf.forward(x % P)
    ref = np.fft.fft2(x)
    signed = lambda v: np.where(v > P // 2, v - P, v)
    assert (signed(re) == np.round(ref.real)).all()
    assert (signed(im) == np.round(ref.imag)).all()
