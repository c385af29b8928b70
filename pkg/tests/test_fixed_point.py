import numpy as np
import pytest
from hypothesis import given, strategies as st

from falcon_pi.fixed_point import (
    FixedPointConfig, FixedPointOverflow, decode_signed, encode_signed, round_div, round_half_away,
)

P = 1316638721


def test_encode_examples():
    assert encode_signed(-5, FixedPointConfig(0, P)) == 1316638716
    assert encode_signed(0, FixedPointConfig(8, P)) == 0
    assert encode_signed(0, FixedPointConfig(0, 11)) == 0
    assert encode_signed(3.5, FixedPointConfig(1, P)) == 7


def test_overflow():
    with pytest.raises(FixedPointOverflow):
        encode_signed(2**30, FixedPointConfig(8, P))


def test_config_rejects_even_modulus():
    with pytest.raises(ValueError):
        FixedPointConfig(8, 1 << 31)
    with pytest.raises(ValueError):
        FixedPointConfig(-1, P)


def test_batching_condition():
    FixedPointConfig(8, P).check_batching(2048)
    with pytest.raises(ValueError):
        FixedPointConfig(8, 1316638723).check_batching(2048)


def test_rounding_is_half_away_from_zero():
    assert round_half_away(2.5) == 3
    assert round_half_away(-2.5) == -3
    assert list(round_div(np.array([5, -5, 4, -4, 6]), 1)) == [3, -3, 2, -2, 3]


@given(st.integers(-(2**22), 2**22), st.integers(0, 8))
def test_encode_decode_inverse(k, frac):
    cfg = FixedPointConfig(frac, P)
    v = k / (1 << frac)
    assert decode_signed(encode_signed(v, cfg), cfg) == v
