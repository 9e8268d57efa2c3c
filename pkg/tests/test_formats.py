import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from flexsfu.errors import InvalidArgumentError, InvalidInputError
from flexsfu.formats import (DEFAULT_FORMATS, FP8_E4M3, FP16, FP32, decode, encode, finite_patterns, fixed,
                             fma_quantized, is_finite_pattern, order_key, ordered_compare, parse_format,
                             ulp_at_one)
from flexsfu.reference import encode_exact, exact_value, fma_exact

Q44 = fixed(8, 4)
ALL = [parse_format(s) for s in DEFAULT_FORMATS]
LESS, EQUAL, GREATER = -1, 0, 1


def test_parse_and_str():
    for s in DEFAULT_FORMATS:
        assert str(parse_format(s)) == s
    assert parse_format("fp8") == FP8_E4M3
    for bad in ("fp64", "fx8:9", "fx12:4", "bf16"):
        with pytest.raises(InvalidArgumentError):
            parse_format(bad)


def test_layout_invariants():
    for f in (FP8_E4M3, FP16, FP32):
        assert 1 + f.exp_bits + f.mant_bits == f.total_bits
    assert FP8_E4M3.bias == 7 and FP8_E4M3.max_finite == 448.0
    assert FP16.max_finite == 65504.0
    assert FP32.max_finite == float(np.finfo(np.float32).max)
    with pytest.raises(InvalidArgumentError):
        fixed(8, 8)


def test_encode_examples():
    assert encode(1.0, FP16) == 0x3C00
    assert encode(1.5, Q44) == 0x18
    assert encode(1000.0, Q44) == 0x7F
    assert decode(0x7F, Q44) == 7.9375
    assert encode(-1000.0, Q44) == 0x80
    assert encode(-0.0, FP16) == 0
    assert encode(1e6, FP16) == 0x7BFF
    assert encode(-1e6, FP8_E4M3) == 0xFE
    with pytest.raises(InvalidInputError):
        encode(math.nan, FP16)
    with pytest.raises(InvalidInputError):
        encode(math.inf, FP32)


def test_decode_examples():
    assert decode(0x3C00, FP16) == 1.0
    assert decode(0xFF, Q44) == -0.0625
    assert decode(0x7E, FP8_E4M3) == 448.0
    assert decode(0x01, FP8_E4M3) == 2.0 ** -9
    assert math.isnan(decode(0x7F, FP8_E4M3))
    assert math.isinf(decode(0x7C00, FP16))


def test_fp16_round_trip_exhaustive():
    allb = np.arange(1 << 16)
    fin = is_finite_pattern(allb, FP16)
    vals = decode(allb[fin], FP16)
    back = encode(vals, FP16)
    # -0 is normalised to +0; every other finite pattern survives
    keep = allb[fin] != 0x8000
    np.testing.assert_array_equal(back[keep], allb[fin][keep])
    assert back[~keep].tolist() == [0]


@pytest.mark.parametrize("fmt", [FP16, FP32])
def test_encode_matches_numpy_casts(fmt):
    rng = np.random.default_rng(11)
    x = np.concatenate((rng.normal(scale=10.0, size=50_000), rng.normal(scale=1e-6, size=20_000),
                        np.ldexp(rng.uniform(1, 2, 5000), rng.integers(-30, 12, 5000))))
    x = x[np.abs(x) < fmt.max_finite]
    dt, ut = (np.float16, np.uint16) if fmt is FP16 else (np.float32, np.uint32)
    ref = x.astype(dt)
    ref = np.where(ref == 0, 0, ref).astype(dt).view(ut).astype(np.int64)
    np.testing.assert_array_equal(encode(x, fmt), ref)


@pytest.mark.parametrize("fmt", ALL, ids=str)
def test_encode_matches_exact_oracle(fmt):
    rng = np.random.default_rng(12)
    x = np.concatenate((rng.normal(scale=4.0, size=3000), rng.normal(scale=1e-3, size=1000),
                        rng.normal(scale=1e6, size=200)))
    ours = encode(x, fmt)
    ref = [encode_exact(float(v), fmt) for v in x]
    np.testing.assert_array_equal(ours, ref)


@pytest.mark.parametrize("fmt", ALL, ids=str)
def test_monotone_encode(fmt):
    rng = np.random.default_rng(13)
    x = np.sort(rng.normal(scale=50.0, size=20_000))
    y = decode(encode(x, fmt), fmt)
    assert np.all(np.diff(y) >= 0)


@pytest.mark.parametrize("fmt", ALL, ids=str)
def test_saturation_never_wraps(fmt):
    hi, lo = encode(1e300, fmt), encode(-1e300, fmt)
    assert decode(hi, fmt) == fmt.max_finite
    assert decode(lo, fmt) == fmt.min_finite


def test_compare_examples():
    assert ordered_compare(encode(-1.0, FP16), encode(0.5, FP16), FP16) == LESS
    assert ordered_compare(0x80, 0x7F, Q44) == LESS
    assert ordered_compare(0x8000, 0x0000, FP16) == EQUAL
    with pytest.raises(InvalidInputError):
        ordered_compare(0x7E00, 0x3C00, FP16)


def test_compare_e4m3_all_pairs():
    pats = finite_patterns(FP8_E4M3)
    vals = decode(pats, FP8_E4M3)
    got = ordered_compare(pats[:, None], pats[None, :], FP8_E4M3)
    np.testing.assert_array_equal(got, np.sign(vals[:, None] - vals[None, :]))


@pytest.mark.parametrize("fmt", [fixed(8, 4), fixed(16, 8), FP16], ids=str)
def test_compare_exhaustive_order(fmt):
    pats = finite_patterns(fmt)
    vals = decode(pats, fmt)
    order = np.argsort(vals, kind="stable")
    keys = order_key(pats[order], fmt)
    assert np.all(np.diff(keys) >= 0)
    assert np.all((np.diff(keys) == 0) == (np.diff(vals[order]) == 0))


@pytest.mark.parametrize("fmt", [FP32, fixed(32, 16)], ids=str)
def test_compare_random_32bit(fmt):
    rng = np.random.default_rng(14)
    a = rng.integers(0, 1 << 32, 1_000_000)
    b = rng.integers(0, 1 << 32, 1_000_000)
    ok = is_finite_pattern(a, fmt) & is_finite_pattern(b, fmt)
    a, b = a[ok], b[ok]
    with np.errstate(invalid="ignore"):
        ref = np.sign(decode(a, fmt) - decode(b, fmt))
    np.testing.assert_array_equal(ordered_compare(a, b, fmt), ref)


def test_ulp_at_one():
    assert ulp_at_one(FP16) == 2.0 ** -10
    assert ulp_at_one(FP32) == 2.0 ** -23
    assert ulp_at_one(Q44) == 0.0625
    assert ulp_at_one(FP8_E4M3) == 0.125


@pytest.mark.parametrize("fmt", ALL, ids=str)
def test_fma_identities(fmt):
    rng = np.random.default_rng(15)
    one, zero = encode(1.0, fmt), encode(0.0, fmt)
    if fmt.total_bits <= 16:
        x = finite_patterns(fmt)
    else:
        x = encode(rng.normal(scale=8.0, size=5000), fmt)
    np.testing.assert_array_equal(fma_quantized(one, x, zero, fmt), encode(decode(x, fmt), fmt))
    q = x[::-1]
    np.testing.assert_array_equal(fma_quantized(zero, x, q, fmt), encode(decode(q, fmt), fmt))


def _random_patterns(rng, fmt, size):
    if fmt.total_bits <= 16:
        return rng.choice(finite_patterns(fmt), size)
    a = rng.integers(0, 1 << 32, size)
    a = a[is_finite_pattern(a, fmt)]
    return a


@pytest.mark.parametrize("fmt", ALL, ids=str)
def test_fma_matches_wide_integer_oracle(fmt):
    rng = np.random.default_rng(16)
    # mix of arbitrary patterns and everyday values near magnitude 1
    m = np.concatenate((_random_patterns(rng, fmt, 3000), encode(rng.normal(size=3000), fmt)))
    x = np.concatenate((_random_patterns(rng, fmt, 3000), encode(rng.normal(scale=4, size=3000), fmt)))
    q = np.concatenate((_random_patterns(rng, fmt, 3000), encode(rng.normal(size=3000), fmt)))
    k = min(m.size, x.size, q.size)
    m, x, q = m[:k], x[:k], q[:k]
    ours = fma_quantized(m, x, q, fmt)
    ref = [fma_exact(a, b, c, fmt) for a, b, c in zip(m.tolist(), x.tolist(), q.tolist())]
    np.testing.assert_array_equal(ours, ref)


def test_fma_single_rounding_case():
    # (1 + u)^2 + u/2 with u = 2^-10 sits just above a halfway point; rounding the
    # product first would land on the tie and round down to even
    u = 2.0 ** -10
    m = x = encode(1.0 + u, FP16)
    q = encode(u / 2, FP16)
    assert decode(fma_quantized(m, x, q, FP16), FP16) == 1.0 + 3 * u
    unfused = decode(encode(decode(encode((1 + u) ** 2, FP16), FP16) + u / 2, FP16), FP16)
    assert unfused == 1.0 + 2 * u


def test_fma_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        fma_quantized(0x7C00, 0x3C00, 0, FP16)


@given(st.floats(-500, 500, allow_nan=False), st.sampled_from(ALL))
def test_encode_is_nearest(x, fmt):
    b = encode(x, fmt)
    y = exact_value(b, fmt)
    err = abs(Fraction(x) - y)
    # nothing representable is strictly closer
    for nb in (b - 1, b + 1):
        if 0 <= nb <= fmt.mask and is_finite_pattern(nb, fmt):
            assert abs(Fraction(x) - exact_value(nb, fmt)) >= err or abs(Fraction(x)) > fmt.max_finite
