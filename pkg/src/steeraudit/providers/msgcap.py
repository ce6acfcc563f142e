"""Captured producer output: one Msgcap per (scenario, condition, w, episode seed)."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)

CONDITIONS = ("commission", "satisfaction", "disclosure_compliant")
SIGNAL_WEIGHTS = (0.25, 0.5, 0.75)


@dataclass
class Recommendation:
    traveler_id: str
    success: bool
    bundle_id: str | None
    message: str
    disclosures: list[str] = field(default_factory=list)
    raw_payload_valid: bool = True

    def __post_init__(self):
        if self.success and not self.bundle_id:
            raise ValueError("a successful recommendation needs a bundle_id")


@dataclass
class Msgcap:
    scenario_id: str
    condition: str
    signal_weight: float
    episode_seed: int
    records: list[Recommendation]
    producer: str = ""
    regime: str = ""

    def header(self) -> dict:
        return {
            "type": "header",
            "scenario_id": self.scenario_id,
            "regime": self.regime,
            "condition": self.condition,
            "w": self.signal_weight,
            "episode_seed": self.episode_seed,
            "producer": self.producer,
        }

    def to_jsonl(self) -> str:
        lines = [json.dumps(self.header(), ensure_ascii=False)]
        lines += [json.dumps(asdict(r), ensure_ascii=False) for r in self.records]
        return "\n".join(lines) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_jsonl(), encoding="utf-8")
        return path

    @classmethod
    def from_jsonl(cls, text: str) -> "Msgcap":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not rows or rows[0].get("type") != "header":
            raise ValueError("msgcap file must start with a header line")
        h = rows[0]
        return cls(
            scenario_id=h["scenario_id"],
            condition=h["condition"],
            signal_weight=h["w"],
            episode_seed=h["episode_seed"],
            records=[Recommendation(**r) for r in rows[1:]],
            producer=h.get("producer", ""),
            regime=h.get("regime", ""),
        )

    @classmethod
    def load(cls, path) -> "Msgcap":
        return cls.from_jsonl(Path(path).read_text(encoding="utf-8"))


def msgcap_filename(scenario_id: str, condition: str, w: float, episode_seed: int) -> str:
    return f"msgcap_{scenario_id}_{condition}_w{w:g}_e{episode_seed}.jsonl"


def parse_producer_payload(text: str | None, traveler_ids: list[str]) -> list[Recommendation]:
    """Turn a raw producer payload into one Recommendation per traveler.

    An unparseable payload, or a traveler missing from it, yields a record
    with ``raw_payload_valid=False`` rather than an exception.
    """
    entries: dict[str, dict] = {}
    payload_ok = False
    if text is not None:
        try:
            payload = json.loads(text)
        except json.JSONDecodeError:
            payload = None
        recs = payload.get("recommendations") if isinstance(payload, dict) else None
        if isinstance(recs, list):
            payload_ok = True
            for entry in recs:
                if isinstance(entry, dict) and isinstance(entry.get("traveler_id"), str):
                    entries.setdefault(entry["traveler_id"], entry)
        else:
            logger.warning("producer payload is not a recommendations object")

    out = []
    for tid in traveler_ids:
        entry = entries.get(tid) if payload_ok else None
        if entry is None or not _well_formed(entry):
            out.append(Recommendation(tid, False, None, "", [], raw_payload_valid=False))
            continue
        bid = entry.get("bundle_id") or None
        out.append(Recommendation(
            traveler_id=tid,
            success=bid is not None,
            bundle_id=bid,
            message=entry.get("message", ""),
            disclosures=list(entry.get("disclosures") or []),
            raw_payload_valid=True,
        ))
    return out


def _well_formed(entry: dict) -> bool:
    bid = entry.get("bundle_id")
    if bid is not None and not isinstance(bid, str):
        return False
    if not isinstance(entry.get("message", ""), str):
        return False
    disclosures = entry.get("disclosures", [])
    return disclosures is None or (
        isinstance(disclosures, list) and all(isinstance(d, str) for d in disclosures)
    )
