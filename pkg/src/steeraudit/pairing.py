"""Near-threshold window, stratified sampling and original/factual pairing."""
from __future__ import annotations

import json
import logging
import random
from collections import defaultdict
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

from ._exact import to_fraction
from .welfare import DEPLOYED_COEFFICIENTS, DEPLOYED_FLOOR, PerceptionRangeError, PerceptionVector, prepare

logger = logging.getLogger(__name__)

VARIANTS = ("original", "factual")
PAIRING_MODES = ("tuple3", "tuple5")


class PairingIntegrityError(ValueError):
    """Two captures share a full key and variant but differ in content."""


@dataclass(frozen=True)
class EpisodeRecord:
    scenario_id: str
    signal_weight: float
    episode_seed: int
    traveler_id: str
    bundle_id: str
    variant: str
    message: str
    phi: PerceptionVector
    baseline_surplus: int
    budget: int
    tau: float
    regime: str = ""

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    @property
    def key3(self) -> tuple:
        return (self.scenario_id, self.traveler_id, self.bundle_id)

    @property
    def key5(self) -> tuple:
        return (self.scenario_id, self.signal_weight, self.episode_seed, self.traveler_id, self.bundle_id)

    def prepared(self, c=DEPLOYED_COEFFICIENTS, floor_fraction=DEPLOYED_FLOOR):
        return prepare(self.phi, self.baseline_surplus, self.budget, self.tau, c, floor_fraction)

    def accept_at(self, g, c=DEPLOYED_COEFFICIENTS, floor_fraction=DEPLOYED_FLOOR) -> bool:
        return self.prepared(c, floor_fraction).accepts(g)


@dataclass(frozen=True)
class Stimulus:
    """One sampled recommendation before the two-variant replay."""

    scenario_id: str
    signal_weight: float
    episode_seed: int
    traveler_id: str
    bundle_id: str
    regime: str
    message: str
    baseline_surplus: int
    budget: int
    tau: float

    @property
    def key5(self) -> tuple:
        return (self.scenario_id, self.signal_weight, self.episode_seed, self.traveler_id, self.bundle_id)


@dataclass(frozen=True)
class WindowSpec:
    lower_fraction: float = -0.10
    upper_fraction: float = 0.05
    per_stratum_target: int = 100
    per_stratum_cap: int | None = None
    sample_seed: int = 42
    name: str = "diagnostic"

    def __post_init__(self):
        if not to_fraction(self.lower_fraction) < to_fraction(self.upper_fraction):
            raise ValueError("window lower bound must be below the upper bound")

    def quota(self) -> int:
        return self.per_stratum_target if self.per_stratum_cap is None else min(self.per_stratum_target, self.per_stratum_cap)


DIAGNOSTIC_WINDOW = WindowSpec()


def in_window(record, spec: WindowSpec = DIAGNOSTIC_WINDOW) -> bool:
    """Closed interval ``tau*b + lower*b <= surplus <= tau*b + upper*b``."""
    b = to_fraction(record.budget)
    center = to_fraction(record.tau) * b
    s = to_fraction(record.baseline_surplus)
    return center + to_fraction(spec.lower_fraction) * b <= s <= center + to_fraction(spec.upper_fraction) * b


def _stratum_rng(seed: int, w, regime: str) -> random.Random:
    return random.Random(f"{seed}|{float(w)!r}|{regime}")


def stratified_sample(items, spec: WindowSpec = DIAGNOSTIC_WINDOW, strata=None) -> list:
    """Seeded per-(w, regime) sample of up to ``spec.quota()`` items.

    Selected items are returned in input order. ``strata`` optionally lists
    the expected (w, regime) keys so that empty ones are logged.
    """
    items = list(items)
    groups: dict[tuple, list[int]] = defaultdict(list)
    for i, it in enumerate(items):
        groups[(float(it.signal_weight), it.regime)].append(i)
    for key in strata or ():
        if (float(key[0]), key[1]) not in groups:
            logger.info("stratum w=%s regime=%s is empty", key[0], key[1])
    chosen: list[int] = []
    quota = spec.quota()
    for (w, regime) in sorted(groups):
        idx = groups[(w, regime)]
        shuffled = idx[:]
        _stratum_rng(spec.sample_seed, w, regime).shuffle(shuffled)
        take = shuffled[:quota]
        if len(take) < quota:
            logger.info("stratum w=%s regime=%s: %d of %d available", w, regime, len(take), quota)
        chosen.extend(take)
    return [items[i] for i in sorted(chosen)]


@dataclass(frozen=True)
class PairedStimulus:
    key: tuple
    original: EpisodeRecord
    factual: EpisodeRecord
    scenario_cluster_id: str = ""

    @property
    def scenario_id(self) -> str:
        return self.original.scenario_id

    @property
    def signal_weight(self) -> float:
        return self.original.signal_weight

    @property
    def regime(self) -> str:
        return self.original.regime


@dataclass
class PairingResult:
    pairs: list[PairedStimulus]
    mode: str
    singletons: int = 0
    collapsed: int = 0
    duplicates: int = 0
    notes: list[str] = field(default_factory=list)

    def manifest(self) -> dict:
        return {
            "mode": self.mode,
            "n_pairs": len(self.pairs),
            "singletons_dropped": self.singletons,
            "realizations_collapsed": self.collapsed,
            "exact_duplicates_ignored": self.duplicates,
            "order": "input order; last realization = latest first appearance of its full key",
        }


def _content(r: EpisodeRecord) -> tuple:
    return (r.message, r.phi.components(), r.baseline_surplus, r.budget, r.tau, r.regime)


def pair_up(records, mode: str = "tuple3") -> PairingResult:
    if mode not in PAIRING_MODES:
        raise ValueError(f"mode must be one of {PAIRING_MODES}")
    slots: dict[tuple, dict[str, EpisodeRecord]] = {}
    duplicates = 0
    for r in records:
        slot = slots.setdefault(r.key5, {})
        prev = slot.get(r.variant)
        if prev is not None:
            if _content(prev) != _content(r):
                raise PairingIntegrityError(f"conflicting {r.variant} captures for {r.key5}")
            duplicates += 1
            continue
        slot[r.variant] = r

    complete = []
    singletons = 0
    for key5, slot in slots.items():
        if len(slot) == 2:
            complete.append(PairedStimulus(key5, slot["original"], slot["factual"]))
        else:
            singletons += 1
    if singletons:
        logger.info("dropped %d unpaired records", singletons)

    if mode == "tuple5":
        return PairingResult(complete, mode, singletons=singletons, duplicates=duplicates)

    latest: dict[tuple, PairedStimulus] = {}
    for p in complete:
        k3 = p.original.key3
        latest.pop(k3, None)  # re-insert so output order follows the retained realization
        latest[k3] = PairedStimulus(k3, p.original, p.factual)
    pairs = list(latest.values())
    return PairingResult(pairs, mode, singletons=singletons,
                         collapsed=len(complete) - len(pairs), duplicates=duplicates)


def assign_clusters(pairs) -> list[PairedStimulus]:
    return [replace(p, scenario_cluster_id=p.scenario_id) for p in pairs]


def n_clusters(pairs) -> int:
    return len({p.scenario_cluster_id or p.scenario_id for p in pairs})


# -- raw paired log ---------------------------------------------------------

_VARIANT_ALIASES = {"original": "original", "orig": "original", "commission": "original",
                    "factual": "factual", "fact": "factual", "template": "factual"}
_PHI_ALIASES = {
    "fit": ("fit", "fit_delta", "perceived_fit_delta"),
    "trust": ("trust", "trust_score"),
    "risk": ("risk", "perceived_risk"),
    "urgency": ("urgency", "urgency_felt"),
}


def record_to_raw(r: EpisodeRecord) -> dict:
    return {
        "scenario_id": r.scenario_id,
        "regime": r.regime,
        "signal_wt": r.signal_weight,
        "episode_seed": r.episode_seed,
        "traveler_id": r.traveler_id,
        "bundle_id": r.bundle_id,
        "variant": r.variant,
        "message": r.message,
        "phi": {"fit": r.phi.fit_delta, "risk": r.phi.risk, "trust": r.phi.trust, "urgency": r.phi.urgency},
        "baseline_surplus_cents": r.baseline_surplus,
        "budget_cents": r.budget,
        "tau": r.tau,
    }


def write_raw_jsonl(records, path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(record_to_raw(r), ensure_ascii=False) + "\n")
    return path


def _first(d: dict, *names, default=None):
    for n in names:
        if n in d and d[n] is not None:
            return d[n]
    return default


def _cents(row: dict, cents_keys, unit_keys):
    v = _first(row, *cents_keys)
    if v is not None:
        return int(to_fraction(v))
    v = _first(row, *unit_keys)
    if v is None:
        raise KeyError(cents_keys[0])
    return int(round(to_fraction(v) * 100))


def infer_regime(row: dict) -> str:
    regime = _first(row, "regime", "market_regime")
    if regime:
        return str(regime)
    sid = str(row.get("scenario_id", "")).lower()
    for name in ("tight", "loose"):
        if name in sid:
            return name
    return "unknown"


def raw_to_record(row: dict) -> EpisodeRecord:
    """Parse one raw-log row, tolerating common alternate key names."""
    variant = _VARIANT_ALIASES.get(str(_first(row, "variant", "arm", default="")).lower())
    if variant is None:
        raise ValueError(f"unknown variant {row.get('variant')!r}")
    phi_src = row.get("phi") if isinstance(row.get("phi"), dict) else row
    comps = {}
    for ch, names in _PHI_ALIASES.items():
        v = _first(phi_src, *names)
        if v is None:
            v = _first(row, *(f"phi_{n}" for n in names))
        if v is None:
            raise KeyError(f"phi.{ch}")
        comps[ch] = v
    phi = PerceptionVector(comps["fit"], comps["trust"], comps["risk"], comps["urgency"],
                           reasoning=str(_first(phi_src, "reasoning", default="")))
    return EpisodeRecord(
        scenario_id=str(row["scenario_id"]),
        signal_weight=float(_first(row, "signal_wt", "signal_weight", "w")),
        episode_seed=int(_first(row, "episode_seed", "seed", default=0)),
        traveler_id=str(row["traveler_id"]),
        bundle_id=str(row["bundle_id"]),
        variant=variant,
        message=str(_first(row, "message", "msg", default="")),
        phi=phi,
        baseline_surplus=_cents(row, ("baseline_surplus_cents",), ("baseline_surplus",)),
        budget=_cents(row, ("budget_cents",), ("budget",)),
        tau=float(_first(row, "tau", "threshold")),
        regime=infer_regime(row),
    )


@dataclass
class IngestReport:
    lines: int = 0
    records: int = 0
    out_of_range: int = 0
    malformed: int = 0

    @property
    def parse_success(self) -> Fraction:
        return Fraction(self.records, self.lines) if self.lines else Fraction(0)

    def manifest(self) -> dict:
        return {"lines": self.lines, "records": self.records, "out_of_range": self.out_of_range,
                "malformed": self.malformed, "parse_success": float(self.parse_success)}


def read_raw_jsonl(path) -> tuple[list[EpisodeRecord], IngestReport]:
    report = IngestReport()
    records = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            report.lines += 1
            try:
                records.append(raw_to_record(json.loads(line)))
            except PerceptionRangeError as exc:
                report.out_of_range += 1
                logger.warning("line %d: %s", lineno, exc)
            except (ValueError, KeyError, TypeError) as exc:
                report.malformed += 1
                logger.warning("line %d: unreadable record (%s)", lineno, exc)
    report.records = len(records)
    return records, report
