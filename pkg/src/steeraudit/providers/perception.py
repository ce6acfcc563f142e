"""Parse a reader's structured output into a PerceptionVector."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Protocol

from ..welfare import PerceptionRangeError, PerceptionVector

logger = logging.getLogger(__name__)

PERCEPTION_SCHEMA = {
    "type": "object",
    "properties": {
        "perceived_fit_delta": {"type": "number"},
        "perceived_risk": {"type": "number"},
        "trust_score": {"type": "number"},
        "urgency_felt": {"type": "number"},
        "reasoning": {"type": "string"},
    },
    "required": ["perceived_fit_delta", "perceived_risk", "trust_score", "urgency_felt", "reasoning"],
}

# parse-failure reason codes
TRANSPORT = "transport"
MALFORMED = "malformed"
SCHEMA = "schema"
OUT_OF_RANGE = "out_of_range"


@dataclass(frozen=True)
class ParseFailure:
    reason: str
    detail: str = ""

    def __bool__(self) -> bool:
        return False


class ReaderError(Exception):
    """Raised by a reader when the call itself failed (not the content)."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail


class Reader(Protocol):
    fingerprint: str

    def read(self, traveler, bundle, message: str) -> str:
        """Return the raw structured output for one message."""


def parse_perception(text: str) -> PerceptionVector | ParseFailure:
    try:
        obj = json.loads(text)
    except (json.JSONDecodeError, TypeError) as exc:
        return ParseFailure(MALFORMED, str(exc))
    if not isinstance(obj, dict):
        return ParseFailure(MALFORMED, "top level is not an object")
    values = []
    for key in ("perceived_fit_delta", "trust_score", "perceived_risk", "urgency_felt"):
        v = obj.get(key)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            return ParseFailure(SCHEMA, f"{key} missing or not a number")
        values.append(v)
    reasoning = obj.get("reasoning", "")
    if not isinstance(reasoning, str):
        return ParseFailure(SCHEMA, "reasoning is not a string")
    try:
        return PerceptionVector(*values, reasoning=reasoning)
    except PerceptionRangeError as exc:
        return ParseFailure(OUT_OF_RANGE, str(exc))


def extract_perception(traveler, bundle, message: str, reader: Reader) -> PerceptionVector | ParseFailure:
    try:
        raw = reader.read(traveler, bundle, message)
    except ReaderError as exc:
        logger.warning("reader call failed: %s", exc)
        return ParseFailure(exc.reason if exc.reason == SCHEMA else TRANSPORT, exc.detail)
    result = parse_perception(raw)
    if isinstance(result, ParseFailure):
        logger.info("perception parse failure (%s): %s", result.reason, result.detail)
    return result
