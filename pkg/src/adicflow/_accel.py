"""Optional numba acceleration and double-double helpers.

Set ``ADICFLOW_DISABLE_NUMBA=1`` to run every kernel as plain Python on numpy
arrays.  The kernels are written so that both paths execute the same code.
"""
from __future__ import annotations

import os
from fractions import Fraction

DISABLED = os.environ.get("ADICFLOW_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

if DISABLED:
    _njit = None
else:
    from numba import njit as _njit


def njit(*args, **kwargs):
    """``numba.njit`` when enabled, identity decorator otherwise."""
    if _njit is None:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return _njit(*args, **kwargs)


def backend() -> str:
    return "python" if _njit is None else "numba"


@njit
def two_sum(a, b):
    s = a + b
    bb = s - a
    err = (a - (s - bb)) + (b - bb)
    return s, err


@njit
def dd_add(ah, al, bh, bl):
    s, e = two_sum(ah, bh)
    e += al + bl
    hi = s + e
    lo = e - (hi - s)
    return hi, lo


@njit
def dd_sub(ah, al, bh, bl):
    return dd_add(ah, al, -bh, -bl)


@njit
def dd_lt(ah, al, bh, bl):
    return ah < bh or (ah == bh and al < bl)


@njit
def dd_le(ah, al, bh, bl):
    return ah < bh or (ah == bh and al <= bl)


def to_dd(x) -> tuple[float, float]:
    """Split a Python number (float, int, Fraction) into a double-double pair.

    A pair ``(hi, lo)`` is returned unchanged.
    """
    if isinstance(x, tuple):
        return float(x[0]), float(x[1])
    hi = float(x)
    if isinstance(x, float):
        return hi, 0.0
    try:
        lo = float(Fraction(x) - Fraction(hi))
    except (TypeError, ValueError):
        lo = 0.0
    return hi, lo
