"""Power-of-two fixed-point helpers.

A stored integer ``q`` with exponent ``e`` represents ``q * 2**e``. Rounding is
half-away-from-zero everywhere, and every narrowing step saturates.
"""
import math

import numpy as np

Q8_MIN, Q8_MAX = -128, 127
I32_MIN, I32_MAX = -(2**31), 2**31 - 1
EXP_MIN, EXP_MAX = -16, 0


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize(x, exp):
    """Float tensor -> int8 at scale ``2**exp``."""
    scaled = np.ldexp(np.asarray(x, dtype=np.float64), -int(exp))
    return np.clip(round_half_away(scaled), Q8_MIN, Q8_MAX).astype(np.int8)


def dequantize(q, exp):
    return np.ldexp(np.asarray(q, dtype=np.float64), int(exp))


def quantize_bias(b, exp):
    scaled = np.ldexp(np.asarray(b, dtype=np.float64), -int(exp))
    return np.clip(round_half_away(scaled), I32_MIN, I32_MAX).astype(np.int32)


def requantize(acc, shift):
    """Rescale an integer accumulator by ``2**-shift`` and saturate to int8.

    ``shift > 0`` is an arithmetic right shift with round-half-away-from-zero;
    ``shift <= 0`` is an exact left shift.
    """
    a = np.asarray(acc, dtype=np.int64)
    shift = int(shift)
    if shift > 0:
        mag = (np.abs(a) + (1 << (shift - 1))) >> shift
        a = np.where(a < 0, -mag, mag)
    elif shift < 0:
        a = a << (-shift)
    return np.clip(a, Q8_MIN, Q8_MAX).astype(np.int8)


def choose_exp(max_abs):
    """Smallest exponent in [-16, 0] whose int8 range covers ``max_abs``."""
    if not np.isfinite(max_abs) or max_abs <= 0:
        return EXP_MIN
    e = math.ceil(math.log2(max_abs / Q8_MAX))
    return int(min(max(e, EXP_MIN), EXP_MAX))
