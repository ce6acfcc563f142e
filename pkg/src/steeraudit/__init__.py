"""Paired counterfactual audit of commission steering in recommendation messages."""
__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402
from .market import Market, generate_small_market, oracle_welfare_ceiling  # noqa: E402
from .welfare import (  # noqa: E402
    DEPLOYED_COEFFICIENTS,
    DEPLOYED_POINT,
    GovernancePoint,
    PerceptionVector,
    RuleCoefficients,
    accept,
)

__all__ = [
    "__version__", "BACKEND", "Market", "generate_small_market", "oracle_welfare_ceiling",
    "DEPLOYED_COEFFICIENTS", "DEPLOYED_POINT", "GovernancePoint", "PerceptionVector", "RuleCoefficients", "accept",
]
