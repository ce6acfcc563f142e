"""End-to-end audit: capture, select, replay both variants, pair, analyse.

The expensive stage is perception extraction, so its results are
checkpointed per call in a JSONL cache; an interrupted run picks up where
it stopped without re-issuing finished calls.
"""
from __future__ import annotations

import hashlib
import json
import logging
import threading
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from . import __version__, kernels
from ._exact import fmt_pp, to_fraction
from .config import AuditConfig, load_config
from .gates import GateVector, compute_msgcap_stats, evaluate_gates, refusal_patterns_hash
from .market import Market
from .pairing import (
    EpisodeRecord,
    PairedStimulus,
    PairingResult,
    Stimulus,
    WindowSpec,
    assign_clusters,
    in_window,
    n_clusters,
    pair_up,
    stratified_sample,
)
from .providers.msgcap import SIGNAL_WEIGHTS, Msgcap
from .providers.perception import ParseFailure, extract_perception
from .providers.producer import produce_msgcap
from .providers.remote import call_many, prompt_hashes
from .providers.template import factual_template
from .stats import (
    CellResult,
    DiscordantCounts,
    PermutationResult,
    SubgroupAnalysis,
    cluster_max_stat_permutation,
    holm_wilcoxon,
    rd_confidence_interval,
    subgroup_analysis,
)
from .sweep import AttributionResult, GridResult, attribution_sweep, run_grid
from .welfare import PerceptionVector

logger = logging.getLogger(__name__)

DEFAULT_EPISODE_SEEDS = (0, 1, 2)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def canonical_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, ensure_ascii=False).encode()).hexdigest()


# -- capture and selection --------------------------------------------------

def capture(markets, producer, weights=SIGNAL_WEIGHTS, episode_seeds=DEFAULT_EPISODE_SEEDS,
            condition: str = "commission") -> list[Msgcap]:
    return [
        produce_msgcap(m, condition, w, e, producer)
        for m in markets for w in weights for e in episode_seeds
    ]


def candidate_stimuli(msgcaps, markets: dict[str, Market]) -> list[Stimulus]:
    """Successful recommendations that point at a real bundle."""
    out = []
    for cap in msgcaps:
        m = markets.get(cap.scenario_id)
        if m is None:
            raise KeyError(f"no market for scenario {cap.scenario_id!r}")
        ids = {b.bundle_id for b in m.bundles}
        for r in cap.records:
            if not (r.raw_payload_valid and r.success and r.bundle_id in ids):
                continue
            t = m.traveler(r.traveler_id)
            b = m.bundle(r.bundle_id)
            out.append(Stimulus(cap.scenario_id, cap.signal_weight, cap.episode_seed, t.traveler_id, b.bundle_id,
                                m.regime, r.message, t.surplus(b), t.budget, t.tau))
    return out


def select_stimuli(stimuli, window: WindowSpec) -> list[Stimulus]:
    inside = [s for s in stimuli if in_window(s, window)]
    strata = [(w, r) for w in SIGNAL_WEIGHTS for r in ("loose", "tight")]
    return stratified_sample(inside, window, strata)


# -- replay with checkpointing ----------------------------------------------

class PerceptionCache:
    """Append-only JSONL of finished perception calls."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self._data: dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    row = json.loads(line)
                    self._data[row["key"]] = row
            logger.info("perception cache: %d entries loaded", len(self._data))

    def __len__(self) -> int:
        return len(self._data)

    def get(self, key: str):
        return self._data.get(key)

    def put(self, key: str, row: dict) -> None:
        row = {"key": key, **row}
        with self._lock:
            self._data[key] = row
            if self.path:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(row, sort_keys=True) + "\n")


@dataclass
class ReplayResult:
    records: list[EpisodeRecord]
    calls: int
    successes: int
    failures: Counter = field(default_factory=Counter)
    cache_hits: int = 0

    @property
    def parse_success(self) -> Fraction:
        return Fraction(self.successes, self.calls) if self.calls else Fraction(1)

    def manifest(self) -> dict:
        return {"calls": self.calls, "successes": self.successes, "failures": dict(sorted(self.failures.items())),
                "cache_hits": self.cache_hits, "parse_success": float(self.parse_success)}


def replay(stimuli, markets: dict[str, Market], reader, cache: PerceptionCache | None = None,
           workers: int = 1) -> ReplayResult:
    """Read every stimulus under its original message and the factual template."""
    if cache is None:
        cache = PerceptionCache()
    fp = getattr(reader, "fingerprint", type(reader).__name__)
    jobs = []
    for st in stimuli:
        m = markets[st.scenario_id]
        t, b = m.traveler(st.traveler_id), m.bundle(st.bundle_id)
        jobs.append((st, "original", t, b, st.message))
        jobs.append((st, "factual", t, b, factual_template(t, b)))
    hits = 0

    def run(job):
        nonlocal hits
        st, variant, t, b, msg = job
        key = canonical_hash([fp, st.scenario_id, t.traveler_id, b.bundle_id, msg])
        row = cache.get(key)
        if row is not None:
            hits += 1
            return row
        res = extract_perception(t, b, msg, reader)
        if isinstance(res, ParseFailure):
            row = {"failure": res.reason}
        else:
            row = {"phi": list(res.components()), "reasoning": res.reasoning}
        cache.put(key, row)
        return row

    rows = call_many(run, jobs, workers)
    out = ReplayResult([], len(jobs), 0, cache_hits=hits)
    for (st, variant, _t, _b, msg), row in zip(jobs, rows):
        if "failure" in row:
            out.failures[row["failure"]] += 1
            continue
        out.successes += 1
        out.records.append(EpisodeRecord(
            st.scenario_id, st.signal_weight, st.episode_seed, st.traveler_id, st.bundle_id, variant, msg,
            PerceptionVector(*row["phi"], reasoning=row.get("reasoning", "")),
            st.baseline_surplus, st.budget, st.tau, st.regime,
        ))
    return out


# -- manifest and reading ---------------------------------------------------

@dataclass
class RunManifest:
    seeds: dict
    window: dict
    pairing: dict
    grid: dict
    providers: dict
    config: dict
    inputs: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "package_version": __version__,
            "kernel_backend": kernels.BACKEND,
            "seeds": self.seeds,
            "window": self.window,
            "pairing": self.pairing,
            "grid": self.grid,
            "providers": self.providers,
            "config": self.config,
            "prompt_sha256": prompt_hashes(),
            "refusal_patterns_sha256": refusal_patterns_hash(),
            "input_sha256": self.inputs,
            **self.extra,
        }

    @property
    def hash(self) -> str:
        # the backend choice does not change any number, so it is left out of the hash
        d = self.to_dict()
        d.pop("kernel_backend")
        return canonical_hash(d)


@dataclass
class AuditReading:
    delta_acc: Fraction
    mcnemar_p: float
    permutation: PermutationResult
    gate_vector: GateVector | None
    point: object
    n: int
    counts: DiscordantCounts
    manifest_hash: str
    invalid_reasons: list[str] = field(default_factory=list)

    @property
    def permutation_p(self) -> Fraction:
        return self.permutation.p

    @property
    def valid(self) -> bool:
        return not self.invalid_reasons


@dataclass
class AuditOutcome:
    reading: AuditReading
    deployed: CellResult
    ci_score: tuple
    ci_bootstrap: tuple
    grid: GridResult
    attribution: list[AttributionResult]
    subgroups: list[SubgroupAnalysis]
    wilcoxon: dict
    manifest: RunManifest
    pairs: list[PairedStimulus] = field(repr=False, default_factory=list)
    parse_success: Fraction = Fraction(1)


def analyze(
    pairs,
    cfg: AuditConfig | None = None,
    manifest: RunManifest | None = None,
    parse_success=1,
    gate_vector: GateVector | None = None,
    n_perm: int | None = None,
    perm_seed: int | None = None,
    exhaustive: bool = False,
    flip_unit: str = "cluster",
    bootstrap_seed: int = 0,
) -> AuditOutcome:
    """Score, test and sweep a fixed pair set."""
    cfg = cfg or load_config()
    pairs = assign_clusters(pairs)
    if not pairs:
        raise ValueError("no pairs to analyse")
    c, floor, grid_spec = cfg.coefficients, cfg.floor_fraction, cfg.grid
    n_perm = cfg.n_perm if n_perm is None else n_perm
    perm_seed = cfg.perm_seed if perm_seed is None else perm_seed

    grid = run_grid(pairs, grid_spec, c, floor, parse_success, cfg.validity, cfg.alpha)
    deployed = grid.cell(cfg.point.lam, cfg.point.kappa)
    perm = cluster_max_stat_permutation(
        pairs, grid_spec.points, c, n_perm, perm_seed, floor, parse_success, cfg.validity,
        exhaustive=exhaustive, flip_unit=flip_unit, tensor=grid.tensor,
    )
    counts = deployed.counts
    invalid = []
    if to_fraction(parse_success) < to_fraction(cfg.validity.parse_success_min):
        invalid.append(f"parse success {float(parse_success) * 100:.1f}% < {cfg.validity.parse_success_min * 100:g}%")
    if deployed.fact_accept_rate >= to_fraction(cfg.validity.fact_accept_ceiling):
        invalid.append(f"factual acceptance {float(deployed.fact_accept_rate) * 100:.1f}% at ceiling "
                       f"(>= {cfg.validity.fact_accept_ceiling * 100:g}%)")

    if manifest is None:
        manifest = RunManifest(
            seeds={"permutation": perm_seed, "bootstrap": bootstrap_seed},
            window={}, pairing={}, grid=grid_spec.to_dict(), providers={}, config=cfg.manifest(),
        )
    manifest.seeds.setdefault("permutation", perm_seed)
    manifest.extra.setdefault("permutation", {"n_perm": n_perm, "exhaustive": exhaustive, "flip_unit": flip_unit})
    manifest.extra.setdefault("n_pairs", len(pairs))
    manifest.extra.setdefault("n_clusters", n_clusters(pairs))

    reading = AuditReading(
        delta_acc=counts.rd,
        mcnemar_p=deployed.mcnemar_p,
        permutation=perm,
        gate_vector=gate_vector,
        point=cfg.point,
        n=counts.n,
        counts=counts,
        manifest_hash=manifest.hash,
        invalid_reasons=invalid,
    )
    subgroups = [
        subgroup_analysis(pairs, "signal_weight", cfg.point, c, floor),
        subgroup_analysis(pairs, "regime", cfg.point, c, floor),
    ]
    return AuditOutcome(
        reading=reading,
        deployed=deployed,
        ci_score=rd_confidence_interval(counts, 0.95, "score"),
        ci_bootstrap=rd_confidence_interval(counts, 0.95, "bootstrap", seed=bootstrap_seed),
        grid=grid,
        attribution=attribution_sweep(pairs, grid_spec, c, floor, parse_success=parse_success, validity=cfg.validity),
        subgroups=subgroups,
        wilcoxon=holm_wilcoxon(pairs),
        manifest=manifest,
        pairs=pairs,
        parse_success=to_fraction(parse_success),
    )


def run_audit(
    markets,
    producer,
    reader,
    cfg: AuditConfig | None = None,
    window: WindowSpec | None = None,
    pairing_mode: str = "tuple3",
    workdir=None,
    episode_seeds=DEFAULT_EPISODE_SEEDS,
    n_perm: int | None = None,
    perm_seed: int | None = None,
    exhaustive: bool = False,
    flip_unit: str = "cluster",
    workers: int = 1,
) -> AuditOutcome:
    """Full pipeline; intermediates are written under ``workdir`` when given."""
    cfg = cfg or load_config()
    window = window or cfg.window("diagnostic")
    markets = list(markets)
    by_id = {m.market_id: m for m in markets}
    work = Path(workdir) if workdir else None
    if work:
        (work / "markets").mkdir(parents=True, exist_ok=True)
        (work / "msgcaps").mkdir(exist_ok=True)
        for m in markets:
            m.save(work / "markets")

    msgcaps = capture(markets, producer, episode_seeds=episode_seeds)
    if work:
        from .providers.msgcap import msgcap_filename
        for cap in msgcaps:
            cap.save(work / "msgcaps" / msgcap_filename(cap.scenario_id, cap.condition, cap.signal_weight,
                                                         cap.episode_seed))
    gv = evaluate_gates(compute_msgcap_stats(msgcaps, by_id), cfg.gate_thresholds)
    inputs = {}
    if work:
        for sub in ("markets", "msgcaps"):
            for f in sorted((work / sub).iterdir()):
                inputs[f"{sub}/{f.name}"] = sha256_file(f)

    stimuli = select_stimuli(candidate_stimuli(msgcaps, by_id), window)
    cache = PerceptionCache(work / "perception_cache.jsonl" if work else None)
    rep = replay(stimuli, by_id, reader, cache, workers)
    paired: PairingResult = pair_up(rep.records, pairing_mode)
    if work:
        from .pairing import write_raw_jsonl
        write_raw_jsonl(rep.records, work / "paired.raw.jsonl")

    manifest = RunManifest(
        seeds={"markets": sorted({m.seed for m in markets}), "sample": window.sample_seed,
               "episodes": list(episode_seeds)},
        window={"name": window.name, "lower_fraction": window.lower_fraction,
                "upper_fraction": window.upper_fraction, "per_stratum_target": window.per_stratum_target,
                "per_stratum_cap": window.per_stratum_cap,
                "order": "window filter -> stratified sample -> two-variant replay -> pair"},
        pairing=paired.manifest(),
        grid=cfg.grid.to_dict(),
        providers={"producer": getattr(producer, "fingerprint", ""), "reader": getattr(reader, "fingerprint", "")},
        config=cfg.manifest(),
        inputs=inputs,
        extra={"replay": rep.manifest(), "n_stimuli": len(stimuli), "n_msgcaps": len(msgcaps)},
    )
    outcome = analyze(paired.pairs, cfg, manifest, rep.parse_success, gv, n_perm, perm_seed, exhaustive, flip_unit)
    if work:
        from .report import write_outputs
        write_outputs(outcome, work)
    logger.info("audit finished: %s at %s, n=%d", fmt_pp(outcome.reading.delta_acc),
                outcome.reading.point.label(), outcome.reading.n)
    return outcome


def verify_inputs(entries) -> list[tuple[str, str]]:
    """``entries`` maps path -> expected sha256. Returns (path, OK|MISMATCH|MISSING)."""
    out = []
    for path, expected in entries.items():
        p = Path(path)
        if not p.is_file():
            out.append((path, "MISSING"))
        elif sha256_file(p) != expected:
            out.append((path, "MISMATCH"))
        else:
            out.append((path, "OK"))
    return out


def read_checksum_file(path) -> dict[str, str]:
    """Parse ``sha256sum``-style lines or a manifest JSON with ``input_sha256``."""
    text = Path(path).read_text(encoding="utf-8")
    base = Path(path).parent
    if text.lstrip().startswith("{"):
        return {str(base / k): v for k, v in json.loads(text)["input_sha256"].items()}
    out = {}
    for line in text.splitlines():
        if line.strip():
            digest, name = line.split(maxsplit=1)
            out[str(base / name.lstrip("*"))] = digest
    return out
