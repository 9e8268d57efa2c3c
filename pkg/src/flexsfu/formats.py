"""Fixed- and floating-point encodings used by the LUT hardware.

All operations are vectorised over numpy arrays of bit patterns (held in
``int64``) or float64 values. Encoding rounds to nearest, ties to even, and
saturates; it never produces an infinity, a NaN, or a negative zero.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, InvalidInputError

FIXED = "fixed"
FLOAT = "float"

LESS, EQUAL, GREATER = -1, 0, 1


@dataclass(frozen=True)
class NumberFormat:
    kind: str
    total_bits: int
    frac_bits: int = 0
    exp_bits: int = 0
    mant_bits: int = 0
    bias: int = 0
    ieee: bool = True  # float only: top exponent reserved for inf/NaN

    def __post_init__(self):
        if self.total_bits not in (8, 16, 32):
            raise InvalidArgumentError("total_bits must be 8, 16 or 32")
        if self.kind == FLOAT:
            if 1 + self.exp_bits + self.mant_bits != self.total_bits:
                raise InvalidArgumentError("sign + exponent + mantissa must fill the word")
        elif self.kind == FIXED:
            if not 0 <= self.frac_bits < self.total_bits:
                raise InvalidArgumentError("need 0 <= frac_bits < total_bits")
        else:
            raise InvalidArgumentError(f"unknown kind {self.kind!r}")

    def __str__(self) -> str:
        if self.kind == FIXED:
            return f"fx{self.total_bits}:{self.frac_bits}"
        return {8: "fp8_e4m3", 16: "fp16", 32: "fp32"}.get(self.total_bits, "float")

    @property
    def mask(self) -> int:
        return (1 << self.total_bits) - 1

    @property
    def is_float(self) -> bool:
        return self.kind == FLOAT

    @property
    def emin(self) -> int:
        """Unbiased exponent of the smallest normal number."""
        return 1 - self.bias

    @property
    def max_finite(self) -> float:
        if self.kind == FIXED:
            return ((1 << (self.total_bits - 1)) - 1) * 2.0 ** -self.frac_bits
        top = (1 << self.exp_bits) - 1
        if self.ieee:
            return (2.0 - 2.0 ** -self.mant_bits) * 2.0 ** (top - 1 - self.bias)
        # all-ones mantissa at the top exponent is the only NaN
        return (2.0 - 2.0 ** (1 - self.mant_bits)) * 2.0 ** (top - self.bias)

    @property
    def min_finite(self) -> float:
        if self.kind == FIXED:
            return -(1 << (self.total_bits - 1)) * 2.0 ** -self.frac_bits
        return -self.max_finite

    @property
    def max_pattern(self) -> int:
        """Bit pattern of the largest finite value."""
        if self.kind == FIXED:
            return (1 << (self.total_bits - 1)) - 1
        return encode(self.max_finite, self)


FP8_E4M3 = NumberFormat(FLOAT, 8, exp_bits=4, mant_bits=3, bias=7, ieee=False)
FP16 = NumberFormat(FLOAT, 16, exp_bits=5, mant_bits=10, bias=15)
FP32 = NumberFormat(FLOAT, 32, exp_bits=8, mant_bits=23, bias=127)


def fixed(total_bits: int, frac_bits: int) -> NumberFormat:
    return NumberFormat(FIXED, total_bits, frac_bits=frac_bits)


DEFAULT_FORMATS = ("fp8_e4m3", "fp16", "fp32", "fx8:4", "fx16:8", "fx32:16")

_NAMED = {"fp8_e4m3": FP8_E4M3, "fp8": FP8_E4M3, "fp16": FP16, "fp32": FP32}


def parse_format(text: str) -> NumberFormat:
    text = text.strip().lower()
    if text in _NAMED:
        return _NAMED[text]
    m = re.fullmatch(r"fx(8|16|32):(\d+)", text)
    if m:
        return fixed(int(m.group(1)), int(m.group(2)))
    raise InvalidArgumentError(f"unknown number format {text!r}")


def _as_bits(bits, fmt: NumberFormat) -> np.ndarray:
    arr = np.asarray(bits, dtype=np.int64)
    if np.any((arr < 0) | (arr > fmt.mask)):
        raise InvalidArgumentError(f"bit pattern does not fit in {fmt.total_bits} bits")
    return arr


def _scalar_out(like, arr):
    return arr.item() if np.ndim(like) == 0 else arr


def is_nan_pattern(bits, fmt: NumberFormat) -> np.ndarray:
    b = np.asarray(bits, dtype=np.int64)
    if fmt.kind == FIXED:
        return np.zeros(b.shape, dtype=bool)
    top = (1 << fmt.exp_bits) - 1
    e = (b >> fmt.mant_bits) & top
    mant = b & ((1 << fmt.mant_bits) - 1)
    if fmt.ieee:
        return (e == top) & (mant != 0)
    return (e == top) & (mant == (1 << fmt.mant_bits) - 1)


def is_finite_pattern(bits, fmt: NumberFormat) -> np.ndarray:
    b = np.asarray(bits, dtype=np.int64)
    if fmt.kind == FIXED:
        return np.ones(b.shape, dtype=bool)
    if fmt.ieee:
        top = (1 << fmt.exp_bits) - 1
        return ((b >> fmt.mant_bits) & top) != top
    return ~is_nan_pattern(b, fmt)


def finite_patterns(fmt: NumberFormat) -> np.ndarray:
    """Every finite pattern of an 8- or 16-bit format, in bit order."""
    if fmt.total_bits > 16:
        raise InvalidArgumentError("enumeration limited to 16-bit formats")
    allb = np.arange(1 << fmt.total_bits, dtype=np.int64)
    return allb[is_finite_pattern(allb, fmt)]


def round_to_format(x, fmt: NumberFormat) -> np.ndarray:
    """Nearest representable value (ties to even), saturating at the extremes."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.isnan(x)):
        raise InvalidInputError("cannot encode NaN")
    if np.any(np.isinf(x)):
        raise InvalidInputError("cannot encode an infinity")
    if fmt.kind == FIXED:
        scaled = np.rint(np.ldexp(x, fmt.frac_bits))
        lo = -(1 << (fmt.total_bits - 1))
        hi = (1 << (fmt.total_bits - 1)) - 1
        return np.ldexp(np.clip(scaled, lo, hi), -fmt.frac_bits)
    ax = np.minimum(np.abs(x), fmt.max_finite)
    _, ex = np.frexp(ax)
    quantum = np.maximum(ex - 1, fmt.emin) - fmt.mant_bits
    y = np.ldexp(np.rint(np.ldexp(ax, -quantum)), quantum)
    return np.copysign(y, x) + 0.0  # + 0.0 turns -0 into +0


def _value_to_bits(y: np.ndarray, fmt: NumberFormat) -> np.ndarray:
    if fmt.kind == FIXED:
        return np.ldexp(y, fmt.frac_bits).astype(np.int64) & fmt.mask
    sign = (y < 0).astype(np.int64)
    ay = np.abs(y)
    _, ex = np.frexp(ay)
    e_unb = ex - 1
    normal = (e_unb >= fmt.emin) & (ay > 0)
    e_unb = np.where(normal, e_unb, fmt.emin)
    frac = np.ldexp(ay, fmt.mant_bits - e_unb).astype(np.int64)
    mant = np.where(normal, frac - (1 << fmt.mant_bits), frac)
    efield = np.where(normal, e_unb + fmt.bias, 0).astype(np.int64)
    return (sign << (fmt.total_bits - 1)) | (efield << fmt.mant_bits) | mant


def encode(x, fmt: NumberFormat):
    """Round ``x`` into ``fmt`` and return the bit pattern(s)."""
    bits = _value_to_bits(round_to_format(x, fmt), fmt)
    return _scalar_out(x, bits)


def decode(bits, fmt: NumberFormat):
    """Exact value of a pattern; IEEE inf patterns decode to inf, NaN patterns to NaN."""
    b = _as_bits(bits, fmt)
    if fmt.kind == FIXED:
        signed = np.where(b >= (1 << (fmt.total_bits - 1)), b - (1 << fmt.total_bits), b)
        return _scalar_out(bits, np.ldexp(signed.astype(np.float64), -fmt.frac_bits))
    sign = b >> (fmt.total_bits - 1)
    top = (1 << fmt.exp_bits) - 1
    e = (b >> fmt.mant_bits) & top
    mant = (b & ((1 << fmt.mant_bits) - 1)).astype(np.float64)
    normal = e != 0
    sig = np.where(normal, mant + (1 << fmt.mant_bits), mant)
    expo = np.where(normal, e - fmt.bias, fmt.emin) - fmt.mant_bits
    val = np.ldexp(sig, expo)
    if fmt.ieee:
        val = np.where(e == top, np.where(mant == 0, np.inf, np.nan), val)
    else:
        val = np.where(is_nan_pattern(b, fmt), np.nan, val)
    val = np.where(sign == 1, -val, val)
    return _scalar_out(bits, val)


def order_key(bits, fmt: NumberFormat) -> np.ndarray:
    """Integer key whose ordering equals the ordering of the decoded values.

    This is what the comparator in each tree stage evaluates: sign-magnitude
    for floats (both zeros map to 0), two's complement for fixed point.
    """
    b = _as_bits(bits, fmt)
    if fmt.kind == FIXED:
        return np.where(b >= (1 << (fmt.total_bits - 1)), b - (1 << fmt.total_bits), b)
    if np.any(is_nan_pattern(b, fmt)):
        raise InvalidInputError("NaN operand in comparison")
    mag = b & ((1 << (fmt.total_bits - 1)) - 1)
    return np.where(b >> (fmt.total_bits - 1), -mag, mag)


def ordered_compare(a_bits, b_bits, fmt: NumberFormat):
    """-1, 0 or 1 for less, equal, greater."""
    out = np.sign(order_key(a_bits, fmt) - order_key(b_bits, fmt))
    if np.ndim(a_bits) == 0 and np.ndim(b_bits) == 0:
        return int(out)
    return out


def ulp_at_one(fmt: NumberFormat) -> float:
    if fmt.kind == FIXED:
        return 2.0 ** -fmt.frac_bits
    return 2.0 ** -fmt.mant_bits


def _fixed_signed(b, fmt):
    return np.where(b >= (1 << (fmt.total_bits - 1)), b - (1 << fmt.total_bits), b)


def _round_shift_even(s: np.ndarray, shift: int) -> np.ndarray:
    """``s / 2**shift`` rounded half-to-even, on int64."""
    if shift == 0:
        return s
    q = s >> shift  # floor
    rem = s - (q << shift)
    half = 1 << (shift - 1)
    up = (rem > half) | ((rem == half) & ((q & 1) == 1))
    return q + up


def _round_to_odd(s: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Collapse an exact sum ``s + e`` (TwoSum output) to one double, rounding to odd."""
    inexact = e != 0
    even = (s.view(np.int64) & 1) == 0
    bump = inexact & even
    toward = np.where(e > 0, np.inf, -np.inf)
    return np.where(bump, np.nextafter(s, toward), s)


def fma_quantized(m_bits, x_bits, q_bits, fmt: NumberFormat):
    """``m * x + q`` computed exactly, then rounded once into ``fmt``."""
    m = _as_bits(m_bits, fmt)
    x = _as_bits(x_bits, fmt)
    q = _as_bits(q_bits, fmt)
    scalar = np.ndim(m_bits) == 0 and np.ndim(x_bits) == 0 and np.ndim(q_bits) == 0
    m, x, q = np.broadcast_arrays(m, x, q)
    if fmt.kind == FIXED:
        f = fmt.frac_bits
        acc = _fixed_signed(m, fmt) * _fixed_signed(x, fmt) + (_fixed_signed(q, fmt) << f)
        r = _round_shift_even(acc, f)
        r = np.clip(r, -(1 << (fmt.total_bits - 1)), (1 << (fmt.total_bits - 1)) - 1)
        out = r & fmt.mask
    else:
        for arr in (m, x, q):
            if np.any(~is_finite_pattern(arr, fmt)):
                raise InvalidInputError("FMA operands must be finite")
        md, xd, qd = (np.asarray(decode(a, fmt), dtype=np.float64) for a in (m, x, q))
        prod = md * xd  # exact: at most 2 * 24 significant bits
        s = prod + qd
        bb = s - prod
        e = (prod - (s - bb)) + (qd - bb)
        # 53 >= p + 2, so rounding to odd first makes the second rounding exact
        out = encode(_round_to_odd(s, e), fmt)
    out = np.asarray(out, dtype=np.int64)
    return out.item() if scalar else out
