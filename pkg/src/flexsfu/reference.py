"""Exact scalar arithmetic on format encodings, using Python integers.

Every finite value of the supported formats is a dyadic rational
``mant * 2**exp``. This module manipulates those pairs directly and rounds
with integer shifts, so it shares no code with the vectorised float path in
:mod:`flexsfu.formats`. It is slow and meant as a reference.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from .errors import InvalidInputError
from .formats import FIXED, NumberFormat
from .pwl import PwlModel, to_segment_coeffs


def _shift_round_even(a: int, s: int) -> int:
    """Round ``a / 2**s`` half to even (``s > 0``, any sign of ``a``)."""
    q = a >> s
    rem = a - (q << s)
    half = 1 << (s - 1)
    if rem > half or (rem == half and q & 1):
        q += 1
    return q


def to_dyadic(bits: int, fmt: NumberFormat) -> tuple[int, int]:
    bits = int(bits)
    if fmt.kind == FIXED:
        if bits >= 1 << (fmt.total_bits - 1):
            bits -= 1 << fmt.total_bits
        return bits, -fmt.frac_bits
    sign = bits >> (fmt.total_bits - 1)
    e = (bits >> fmt.mant_bits) & ((1 << fmt.exp_bits) - 1)
    m = bits & ((1 << fmt.mant_bits) - 1)
    top = (1 << fmt.exp_bits) - 1
    if (fmt.ieee and e == top) or (not fmt.ieee and e == top and m == (1 << fmt.mant_bits) - 1):
        raise InvalidInputError("non-finite pattern")
    if e == 0:
        mant, exp = m, fmt.emin - fmt.mant_bits
    else:
        mant, exp = m | (1 << fmt.mant_bits), e - fmt.bias - fmt.mant_bits
    return (-mant if sign else mant), exp


def exact_value(bits: int, fmt: NumberFormat) -> Fraction:
    mant, exp = to_dyadic(bits, fmt)
    return Fraction(mant) * Fraction(2) ** exp


def _max_float(fmt: NumberFormat) -> tuple[int, int]:
    """(mantissa, exponent) of the largest finite float."""
    top = (1 << fmt.exp_bits) - 1
    if fmt.ieee:
        return (1 << (fmt.mant_bits + 1)) - 1, top - 1 - fmt.bias - fmt.mant_bits
    return (1 << (fmt.mant_bits + 1)) - 2, top - fmt.bias - fmt.mant_bits


def round_dyadic(mant: int, exp: int, fmt: NumberFormat) -> int:
    """Encode ``mant * 2**exp`` with one round-half-even step, saturating."""
    if fmt.kind == FIXED:
        s = exp + fmt.frac_bits
        k = mant << s if s >= 0 else _shift_round_even(mant, -s)
        lo, hi = -(1 << (fmt.total_bits - 1)), (1 << (fmt.total_bits - 1)) - 1
        k = min(max(k, lo), hi)
        return k & ((1 << fmt.total_bits) - 1)
    if mant == 0:
        return 0
    neg = mant < 0
    a = -mant if neg else mant
    top_exp = a.bit_length() - 1 + exp
    qe = max(top_exp, fmt.emin) - fmt.mant_bits
    s = exp - qe
    m = a << s if s >= 0 else _shift_round_even(a, -s)
    if m >> (fmt.mant_bits + 1):
        m >>= 1
        qe += 1
    if m == 0:
        return 0
    mmax, emax = _max_float(fmt)
    # m is normalised here, so comparing exponents first is sufficient
    if qe > emax or (qe == emax and m > mmax):
        m, qe = mmax, emax
    if m < (1 << fmt.mant_bits):
        field, frac = 0, m
    else:
        field, frac = qe + fmt.mant_bits + fmt.bias, m - (1 << fmt.mant_bits)
    return (int(neg) << (fmt.total_bits - 1)) | (field << fmt.mant_bits) | frac


def encode_exact(x, fmt: NumberFormat) -> int:
    """Encode a float or Fraction whose denominator is a power of two."""
    fr = Fraction(x)
    num, den = fr.numerator, fr.denominator
    if den & (den - 1):
        raise InvalidInputError("value is not dyadic")
    return round_dyadic(num, -(den.bit_length() - 1), fmt)


def fma_exact(m_bits: int, x_bits: int, q_bits: int, fmt: NumberFormat) -> int:
    mm, me = to_dyadic(m_bits, fmt)
    xm, xe = to_dyadic(x_bits, fmt)
    qm, qe = to_dyadic(q_bits, fmt)
    pm, pe = mm * xm, me + xe
    e = min(pe, qe)
    total = (pm << (pe - e)) + (qm << (qe - e))
    return round_dyadic(total, e, fmt)


class QuantizedPwlReference:
    """Software model of the quantized interpolant, independent of the LUT layout.

    Breakpoints and segment coefficients are encoded one by one; the segment
    is found by a linear count of breakpoints strictly below the input and
    the output comes from :func:`fma_exact`.
    """

    def __init__(self, model: PwlModel, fmt: NumberFormat):
        self.fmt = fmt
        coeffs = to_segment_coeffs(model)
        self.bp_bits = [encode_exact(float(p), fmt) for p in model.p]
        self.bp_vals = np.array([float(exact_value(b, fmt)) for b in self.bp_bits])
        self.m_bits = [encode_exact(float(m), fmt) for m in coeffs.m]
        self.q_bits = [encode_exact(float(q), fmt) for q in coeffs.q]

    def segments(self, x_bits) -> np.ndarray:
        xv = np.array([math.ldexp(*to_dyadic(b, self.fmt)) for b in np.ravel(x_bits).tolist()])
        # decoded values are exact doubles, so float comparison is exact
        return (xv[:, None] > self.bp_vals[None, :]).sum(axis=1)

    def __call__(self, x_bits) -> np.ndarray:
        flat = np.ravel(np.asarray(x_bits, dtype=np.int64))
        segs = self.segments(flat)
        cache: dict = {}
        out = np.empty(flat.size, dtype=np.int64)
        for i, (xb, sg) in enumerate(zip(flat.tolist(), segs.tolist())):
            key = (xb, sg)
            r = cache.get(key)
            if r is None:
                r = fma_exact(self.m_bits[sg], xb, self.q_bits[sg], self.fmt)
                cache[key] = r
            out[i] = r
        return out.reshape(np.shape(x_bits))
