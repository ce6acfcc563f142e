"""The frozen accept/reject rule with governance dials.

A traveler accepts bundle ``b`` when

    (u - p) + clip(lam * (c . phi) * budget, -kappa * budget, +kappa * budget) >= tau * budget

unless the baseline surplus ``u - p`` is below ``floor_fraction * budget``,
in which case the bundle is rejected outright. All comparisons are done on
exact fractions so boundary pairs never depend on float rounding.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from functools import cached_property

from ._exact import to_fraction

CHANNELS = ("fit", "trust", "risk", "urgency")


class PerceptionRangeError(ValueError):
    """A perception component fell outside [-1, 1]."""


@dataclass(frozen=True)
class PerceptionVector:
    fit_delta: float
    trust: float
    risk: float
    urgency: float
    reasoning: str = ""

    def __post_init__(self):
        for name, value in zip(CHANNELS, self.components()):
            if isinstance(value, bool) or not -1 <= value <= 1:
                raise PerceptionRangeError(f"{name}={value!r} outside [-1, 1]")

    def components(self) -> tuple:
        return (self.fit_delta, self.trust, self.risk, self.urgency)

    def with_channel(self, channel: str, value: float) -> "PerceptionVector":
        field = "fit_delta" if channel == "fit" else channel
        return replace(self, **{field: value})

    @classmethod
    def zero(cls) -> "PerceptionVector":
        return cls(0, 0, 0, 0)


@dataclass(frozen=True)
class RuleCoefficients:
    """Signed channel weights; the risk sign is part of the vector."""

    fit: float = 0.03
    trust: float = 0.015
    risk: float = -0.025
    urgency: float = 0.01

    def components(self) -> tuple:
        return (self.fit, self.trust, self.risk, self.urgency)

    @cached_property
    def exact(self) -> tuple[Fraction, ...]:
        return tuple(to_fraction(v) for v in self.components())


DEPLOYED_COEFFICIENTS = RuleCoefficients()


@dataclass(frozen=True)
class GovernancePoint:
    lam: float = 1.0
    kappa: float = 0.05

    def __post_init__(self):
        if self.lam < 0 or self.kappa < 0:
            raise ValueError("lambda and kappa must be nonnegative")

    @cached_property
    def exact(self) -> tuple[Fraction, Fraction]:
        return to_fraction(self.lam), to_fraction(self.kappa)

    def label(self) -> str:
        return f"(λ={self.lam:g}, κ={self.kappa:g})"


DEPLOYED_POINT = GovernancePoint(1.0, 0.05)
DEPLOYED_FLOOR = -0.10


@dataclass(frozen=True)
class EconomicState:
    """Utility, price and budget share one money unit (integer cents by default)."""

    utility: float
    price: float
    budget: float
    tau: float
    floor_fraction: float = DEPLOYED_FLOOR

    def __post_init__(self):
        if not self.budget > 0:
            raise ValueError("budget must be positive")

    @property
    def surplus(self) -> Fraction:
        return to_fraction(self.utility) - to_fraction(self.price)


def perception_score(phi: PerceptionVector, c: RuleCoefficients = DEPLOYED_COEFFICIENTS) -> Fraction:
    """Exact dot product ``c . phi``."""
    return sum((w * to_fraction(v) for w, v in zip(c.exact, phi.components())), Fraction(0))


def _clip(x: Fraction, bound: Fraction) -> Fraction:
    return max(-bound, min(bound, x))


def message_adjustment(phi: PerceptionVector, c: RuleCoefficients, g: GovernancePoint, budget) -> Fraction:
    lam, kappa = g.exact
    b = to_fraction(budget)
    return _clip(lam * perception_score(phi, c) * b, kappa * b)


def accept(
    phi: PerceptionVector,
    s: EconomicState,
    c: RuleCoefficients = DEPLOYED_COEFFICIENTS,
    g: GovernancePoint = DEPLOYED_POINT,
) -> bool:
    surplus = s.surplus
    b = to_fraction(s.budget)
    # hard floor short-circuits before any message effect
    if surplus < to_fraction(s.floor_fraction) * b:
        return False
    return surplus + message_adjustment(phi, c, g, b) >= to_fraction(s.tau) * b


def zero_coefficient(c: RuleCoefficients, channel: str) -> RuleCoefficients:
    if channel not in CHANNELS:
        raise ValueError(f"unknown channel {channel!r}; expected one of {CHANNELS}")
    return replace(c, **{channel: 0.0})


def clip_binds(phi: PerceptionVector, c: RuleCoefficients, g: GovernancePoint) -> bool:
    lam, kappa = g.exact
    return abs(lam * perception_score(phi, c)) > kappa


@dataclass(frozen=True)
class PreparedDecision:
    """Budget-normalised form of one rule evaluation, reusable across dials.

    With ``gap = tau - surplus / budget`` the rule reduces to
    ``floor_ok and clip(lam * score, +-kappa) >= gap``.
    """

    score: Fraction
    gap: Fraction
    floor_ok: bool

    def accepts(self, g: GovernancePoint) -> bool:
        if not self.floor_ok:
            return False
        lam, kappa = g.exact
        return _clip(lam * self.score, kappa) >= self.gap

    def binds(self, g: GovernancePoint) -> bool:
        lam, kappa = g.exact
        return abs(lam * self.score) > kappa


def prepare(
    phi: PerceptionVector,
    surplus,
    budget,
    tau,
    c: RuleCoefficients = DEPLOYED_COEFFICIENTS,
    floor_fraction=DEPLOYED_FLOOR,
) -> PreparedDecision:
    b = to_fraction(budget)
    if not b > 0:
        raise ValueError("budget must be positive")
    sur = to_fraction(surplus)
    return PreparedDecision(
        score=perception_score(phi, c),
        gap=to_fraction(tau) - sur / b,
        floor_ok=not sur < to_fraction(floor_fraction) * b,
    )
