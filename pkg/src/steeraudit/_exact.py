"""Exact rational conversion for money, fractions and perception values."""
from __future__ import annotations

from decimal import Decimal
from fractions import Fraction
from numbers import Integral, Real


def to_fraction(x) -> Fraction:
    """Convert ``x`` to an exact Fraction.

    Floats are read through their shortest decimal repr, so ``0.1`` becomes
    ``1/10`` rather than the nearest binary double. Booleans are rejected.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, bool):
        raise TypeError("booleans are not numbers here")
    if isinstance(x, Integral):
        return Fraction(int(x))
    if isinstance(x, Decimal):
        return Fraction(x)
    if isinstance(x, Real):
        return Fraction(repr(float(x)))
    if isinstance(x, str):
        return Fraction(x.strip())
    raise TypeError(f"cannot convert {type(x).__name__} to an exact fraction")


def fmt_pp(x: Fraction, digits: int = 2, sign: bool = True) -> str:
    """Render a fraction as percentage points, e.g. ``+7.69pp``."""
    value = float(x) * 100
    return f"{value:+.{digits}f}pp" if sign else f"{value:.{digits}f}pp"


def fmt_pct(x: Fraction, digits: int = 2) -> str:
    return f"{float(x) * 100:.{digits}f}%"
