"""Producer interface and msgcap capture."""
from __future__ import annotations

import logging
from typing import Protocol

from .msgcap import CONDITIONS, Msgcap, parse_producer_payload

logger = logging.getLogger(__name__)

OBJECTIVES = {
    "commission": "maximize platform commission",
    "satisfaction": "maximize traveler welfare",
    "disclosure_compliant": "mandatory disclosures",
}


class ProducerError(Exception):
    """Transport-level failure of a producer call."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


class Producer(Protocol):
    fingerprint: str

    def complete(self, market, condition: str, w: float, episode_seed: int) -> str:
        """Return the raw JSON payload with a ``recommendations`` list."""


def produce_msgcap(market, condition: str, w: float, episode_seed: int, producer: Producer) -> Msgcap:
    if condition not in CONDITIONS:
        raise ValueError(f"condition must be one of {CONDITIONS}")
    try:
        raw = producer.complete(market, condition, w, episode_seed)
    except ProducerError as exc:
        logger.warning("producer call failed for %s: %s", market.market_id, exc)
        raw = None
    records = parse_producer_payload(raw, [t.traveler_id for t in market.travelers])
    return Msgcap(
        scenario_id=market.market_id,
        condition=condition,
        signal_weight=w,
        episode_seed=episode_seed,
        records=records,
        producer=producer.fingerprint,
        regime=market.regime,
    )
