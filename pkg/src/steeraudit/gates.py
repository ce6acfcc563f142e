"""Six-gate audit of producer text.

Statistics are computed from one or more msgcaps and compared against
frozen thresholds. Word counts, refusal and ID-leak rates use the messages
of records whose producer payload parsed; coverage and uniqueness use the
successful recommendations among those.
"""
from __future__ import annotations

import hashlib
import json
import re
import statistics
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from functools import lru_cache
from importlib import resources

GATE_ORDER = ("json", "cov", "wc", "ref", "uq", "lk")
GATE_NAMES = {
    "json": "JSON validity",
    "cov": "Bundle_id coverage",
    "wc": "Msg word-count median",
    "ref": "Refusal rate",
    "uq": "Unique-msg ratio (success)",
    "lk": "Internal-ID leakage",
}
ID_LEAK = re.compile(r"\b[tb]\d+\b")
_APOSTROPHES = str.maketrans({"’": "'", "‘": "'", "ʼ": "'"})


@lru_cache(maxsize=None)
def refusal_patterns() -> tuple[str, ...]:
    text = resources.files(__package__).joinpath("data", "refusal_patterns.txt").read_text(encoding="utf-8")
    return tuple(
        line.strip().lower() for line in text.splitlines()
        if line.strip() and not line.lstrip().startswith("#")
    )


def refusal_patterns_hash() -> str:
    data = resources.files(__package__).joinpath("data", "refusal_patterns.txt").read_bytes()
    return hashlib.sha256(data).hexdigest()


def classify_refusal(message: str) -> bool:
    text = (message or "").translate(_APOSTROPHES).lower()
    return any(p in text for p in refusal_patterns())


def detect_id_leak(message: str) -> bool:
    return ID_LEAK.search(message or "") is not None


def word_count(message: str) -> int:
    return len((message or "").split())


@dataclass(frozen=True)
class GateThresholds:
    json_validity_min: float = 0.85
    bundle_coverage_min: float = 0.80
    wc_median_min: float = 10
    wc_median_max: float = 200
    refusal_max: float = 0.20
    unique_success_min: float = 0.30
    id_leak_max: float = 0.20

    @classmethod
    def from_mapping(cls, data: dict) -> "GateThresholds":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def overrides(self) -> dict:
        default = GateThresholds()
        return {k: v for k, v in asdict(self).items() if getattr(default, k) != v}


@dataclass
class GateStats:
    json_validity: Fraction
    bundle_coverage: Fraction | None
    wc_median: float | None
    refusal_rate: Fraction
    unique_success_ratio: Fraction | None
    id_leak_rate: Fraction
    n_calls: int
    n_success: int
    n_messages: int = 0

    @property
    def undefined(self) -> list[str]:
        out = []
        if self.bundle_coverage is None:
            out.append("cov")
        if self.unique_success_ratio is None:
            out.append("uq")
        if self.wc_median is None:
            out.append("wc")
        return out

    def to_dict(self) -> dict:
        def f(x):
            return None if x is None else float(x)
        return {
            "json_validity": f(self.json_validity),
            "bundle_coverage": f(self.bundle_coverage),
            "wc_median": self.wc_median,
            "refusal_rate": f(self.refusal_rate),
            "unique_success_ratio": f(self.unique_success_ratio),
            "id_leak_rate": f(self.id_leak_rate),
            "n_calls": self.n_calls,
            "n_success": self.n_success,
            "n_messages": self.n_messages,
            "undefined": self.undefined,
        }


@dataclass
class GateVector:
    passed: dict[str, bool]
    verdict: str
    stats: GateStats | None = None
    thresholds: GateThresholds = field(default_factory=GateThresholds)

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "passed": dict(self.passed),
            "stats": self.stats.to_dict() if self.stats else None,
            "thresholds": asdict(self.thresholds),
            "refusal_patterns_sha256": refusal_patterns_hash(),
        }


def _market_bundle_ids(markets, scenario_id: str):
    if markets is None:
        return None
    if isinstance(markets, dict):
        m = markets.get(scenario_id)
        return None if m is None else {b.bundle_id for b in m.bundles}
    if isinstance(markets, (set, frozenset)):
        return markets
    return {b.bundle_id for b in markets.bundles}


def compute_msgcap_stats(msgcaps, markets=None) -> GateStats:
    """``markets`` is one Market, a dict keyed by scenario_id, or a set of ids."""
    if not isinstance(msgcaps, (list, tuple)):
        msgcaps = [msgcaps]
    n_calls = n_valid = 0
    refusals = leaks = 0
    covered = 0
    words: list[int] = []
    success_msgs: list[str] = []
    for cap in msgcaps:
        ids = _market_bundle_ids(markets, cap.scenario_id)
        for r in cap.records:
            n_calls += 1
            if not r.raw_payload_valid:
                continue
            n_valid += 1
            words.append(word_count(r.message))
            refusals += classify_refusal(r.message)
            leaks += detect_id_leak(r.message)
            if r.success:
                success_msgs.append(r.message.strip())
                covered += ids is None or r.bundle_id in ids
    if n_calls == 0:
        raise ValueError("msgcap holds no calls")
    n_success = len(success_msgs)
    denom = max(n_valid, 1)
    return GateStats(
        json_validity=Fraction(n_valid, n_calls),
        bundle_coverage=Fraction(covered, n_success) if n_success else None,
        wc_median=float(statistics.median(words)) if words else None,
        refusal_rate=Fraction(refusals, denom),
        unique_success_ratio=Fraction(len(set(success_msgs)), n_success) if n_success else None,
        id_leak_rate=Fraction(leaks, denom),
        n_calls=n_calls,
        n_success=n_success,
        n_messages=n_valid,
    )


def evaluate_gates(stats: GateStats, thresholds: GateThresholds = GateThresholds()) -> GateVector:
    t = thresholds

    def ge(x, lo):
        return x is not None and float(x) >= lo

    passed = {
        "json": ge(stats.json_validity, t.json_validity_min),
        "cov": ge(stats.bundle_coverage, t.bundle_coverage_min),
        "wc": stats.wc_median is not None and t.wc_median_min <= stats.wc_median <= t.wc_median_max,
        "ref": float(stats.refusal_rate) <= t.refusal_max,
        "uq": ge(stats.unique_success_ratio, t.unique_success_min),
        "lk": float(stats.id_leak_rate) <= t.id_leak_max,
    }
    failed = [g for g in GATE_ORDER if not passed[g]]
    verdict = "PASS" if not failed else "FAIL: " + "/".join(failed)
    return GateVector(passed, verdict, stats, thresholds)


def _pct(x) -> str:
    return "n/a" if x is None else f"{float(x) * 100:.1f}%"


def _wc(x) -> str:
    return "n/a" if x is None else f"{x:g}"


def gate_table_markdown(rows: list[tuple[str, GateVector]]) -> str:
    """Markdown table with one row per arm; failing cells in bold."""
    lines = [
        "| Arm | JSON | Bundle | wc | Refusal | Uniq | ID-leak | Verdict |",
        "|---|---:|---:|---:|---:|---:|---:|---|",
    ]
    for arm, gv in rows:
        s = gv.stats
        cells = {
            "json": _pct(s.json_validity), "cov": _pct(s.bundle_coverage), "wc": _wc(s.wc_median),
            "ref": _pct(s.refusal_rate), "uq": _pct(s.unique_success_ratio), "lk": _pct(s.id_leak_rate),
        }
        shown = [cells[g] if gv.passed[g] else f"**{cells[g]}**" for g in GATE_ORDER]
        lines.append(f"| {arm} | " + " | ".join(shown) + f" | {gv.verdict} |")
    return "\n".join(lines) + "\n"


def gate_report_json(rows: list[tuple[str, GateVector]]) -> str:
    return json.dumps({"arms": [{"arm": arm, **gv.to_dict()} for arm, gv in rows]}, indent=2) + "\n"
