"""The minimum-disclosure factual message used as the control arm."""
from __future__ import annotations

from fractions import Fraction


def format_price(cents: int) -> str:
    sign = "-" if cents < 0 else ""
    cents = abs(int(cents))
    return f"{sign}{cents // 100}.{cents % 100:02d}"


def format_rate(rate) -> str:
    """Commission rate as a percent with one decimal, rounded half-up."""
    pct = Fraction(rate) * 100
    tenths = (pct * 10 + Fraction(1, 2)) // 1
    return f"{tenths // 10}.{tenths % 10}%"


def factual_template(traveler, bundle) -> str:
    """Fixed-format factual message for ``bundle``.

    Uses the bundle's display name, never its internal id. ``traveler`` is
    accepted for interface symmetry with producers; the text does not
    depend on it.
    """
    extras = ", ".join(bundle.extras) if bundle.extras else "none"
    return (
        f"Recommend {bundle.name}. Total price: {format_price(bundle.price)}. "
        f"Commission rate: {format_rate(bundle.commission_rate)}. Extras: {extras}."
    )
