"""Inference on paired accept/reject outcomes.

Exact McNemar, paired risk difference with interval, the scenario-clustered
max-statistic permutation over a governance grid, Holm-corrected Wilcoxon
on perception deltas, and subgroup/regime summaries.
"""
from __future__ import annotations

import itertools
import logging
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import optimize, stats as sps

from . import kernels
from ._exact import fmt_pp, to_fraction
from .welfare import CHANNELS, DEPLOYED_COEFFICIENTS, DEPLOYED_FLOOR, DEPLOYED_POINT, GovernancePoint

logger = logging.getLogger(__name__)

REGIME_LABELS = ("excluded", "live", "attenuated", "null")


@dataclass(frozen=True)
class ValidityThresholds:
    parse_success_min: float = 0.95
    fact_accept_ceiling: float = 0.98


@dataclass(frozen=True)
class DiscordantCounts:
    """b: original-only accepts; c: factual-only accepts."""

    b: int
    c: int
    n11: int
    n00: int

    def __post_init__(self):
        if min(self.b, self.c, self.n11, self.n00) < 0:
            raise ValueError("counts must be nonnegative")

    @classmethod
    def from_margins(cls, n: int, orig_accepts: int, fact_accepts: int, b: int, c: int) -> "DiscordantCounts":
        n11 = orig_accepts - b
        if fact_accepts - c != n11:
            raise ValueError("margins are inconsistent with the discordant counts")
        return cls(b, c, n11, n - b - c - n11)

    @classmethod
    def from_decisions(cls, orig, fact) -> "DiscordantCounts":
        o = np.asarray(orig, dtype=bool)
        f = np.asarray(fact, dtype=bool)
        return cls(int((o & ~f).sum()), int((~o & f).sum()), int((o & f).sum()), int((~o & ~f).sum()))

    @property
    def n(self) -> int:
        return self.b + self.c + self.n11 + self.n00

    @property
    def orig_accepts(self) -> int:
        return self.b + self.n11

    @property
    def fact_accepts(self) -> int:
        return self.c + self.n11

    @property
    def rd(self) -> Fraction:
        if self.n == 0:
            raise ValueError("no pairs")
        return Fraction(self.b - self.c, self.n)


def mcnemar_exact_fraction(b: int, c: int) -> Fraction:
    n = b + c
    if n == 0:
        return Fraction(1)
    tail = sum(math.comb(n, k) for k in range(max(b, c), n + 1))
    return min(Fraction(1), Fraction(2 * tail, 2 ** n))


def mcnemar_exact(b: int, c: int) -> float:
    """Two-sided exact binomial test on the ``b + c`` discordant pairs."""
    if b < 0 or c < 0:
        raise ValueError("counts must be nonnegative")
    return float(mcnemar_exact_fraction(b, c))


def format_p(p) -> str:
    return f"{float(p):.4f}"


@dataclass
class CellResult:
    point: GovernancePoint
    counts: DiscordantCounts
    clip_rate: Fraction
    fact_accept_rate: Fraction
    orig_accept_rate: Fraction
    parse_success: Fraction = Fraction(1)
    validity_excluded: bool = False
    exclusion_reason: str = ""
    mcnemar_p: float = 1.0
    regime: str = ""

    @property
    def rd(self) -> Fraction:
        return self.counts.rd

    def row(self) -> dict:
        lam, kappa = self.point.exact
        return {
            "lambda": self.point.lam,
            "kappa": self.point.kappa,
            "rd_pp": round(float(self.rd) * 100, 4),
            "b": self.counts.b,
            "c": self.counts.c,
            "n": self.counts.n,
            "clip_rate_pct": round(float(self.clip_rate) * 100, 4),
            "fact_acc_pct": round(float(self.fact_accept_rate) * 100, 4),
            "orig_acc_pct": round(float(self.orig_accept_rate) * 100, 4),
            "mcnemar_p": self.mcnemar_p,
            "excluded": self.validity_excluded,
            "regime": self.regime,
        }


# -- decision tensors -------------------------------------------------------

@dataclass
class DecisionTensor:
    """Accept and clip-binding indicators, shape (cells, pairs)."""

    points: list[GovernancePoint]
    acc_orig: np.ndarray
    acc_fact: np.ndarray
    bind_orig: np.ndarray
    bind_fact: np.ndarray

    def counts(self, i: int) -> DiscordantCounts:
        return DiscordantCounts.from_decisions(self.acc_orig[i], self.acc_fact[i])


def decision_tensor(pairs, points, c=DEPLOYED_COEFFICIENTS, floor_fraction=DEPLOYED_FLOOR) -> DecisionTensor:
    """Score every pair under every dial setting from its frozen perceptions."""
    pairs = list(pairs)
    points = list(points)
    shape = (len(points), len(pairs))
    out = [np.zeros(shape, dtype=bool) for _ in range(4)]
    prepared = [(p.original.prepared(c, floor_fraction), p.factual.prepared(c, floor_fraction)) for p in pairs]
    for i, g in enumerate(points):
        for j, (po, pf) in enumerate(prepared):
            out[0][i, j] = po.accepts(g)
            out[1][i, j] = pf.accepts(g)
            out[2][i, j] = po.binds(g)
            out[3][i, j] = pf.binds(g)
    return DecisionTensor(points, *out)


def _cell(t: DecisionTensor, i: int, parse_success, validity: ValidityThresholds) -> CellResult:
    counts = t.counts(i)
    n = counts.n
    fact_rate = Fraction(counts.fact_accepts, n)
    ps = to_fraction(parse_success)
    reason = ""
    if ps < to_fraction(validity.parse_success_min):
        reason = "parse"
    elif fact_rate >= to_fraction(validity.fact_accept_ceiling):
        reason = "saturated"
    return CellResult(
        point=t.points[i],
        counts=counts,
        clip_rate=Fraction(int(t.bind_orig[i].sum() + t.bind_fact[i].sum()), 2 * n),
        fact_accept_rate=fact_rate,
        orig_accept_rate=Fraction(counts.orig_accepts, n),
        parse_success=ps,
        validity_excluded=bool(reason),
        exclusion_reason=reason,
        mcnemar_p=mcnemar_exact(counts.b, counts.c),
    )


def cells_from_tensor(t: DecisionTensor, parse_success=1, validity=ValidityThresholds()) -> list[CellResult]:
    return [_cell(t, i, parse_success, validity) for i in range(len(t.points))]


def paired_rd(
    pairs,
    point: GovernancePoint = DEPLOYED_POINT,
    c=DEPLOYED_COEFFICIENTS,
    floor_fraction=DEPLOYED_FLOOR,
    parse_success=1,
    validity: ValidityThresholds = ValidityThresholds(),
) -> CellResult:
    pairs = list(pairs)
    if not pairs:
        raise ValueError("paired_rd needs at least one pair")
    t = decision_tensor(pairs, [point], c, floor_fraction)
    return _cell(t, 0, parse_success, validity)


# -- interval for the paired difference --------------------------------------

def _tango_z(delta: float, b: int, c: int, n: int) -> float:
    a = 2 * n
    bb = (2 * n - b + c) * delta - b - c
    cc = -c * delta * (1 - delta)
    q21 = (math.sqrt(max(bb * bb - 4 * a * cc, 0.0)) - bb) / (2 * a)
    var = n * (2 * q21 + delta * (1 - delta))
    num = b - c - n * delta
    if var <= 0:
        return math.copysign(math.inf, num) if num else 0.0
    return num / math.sqrt(var)


def tango_interval(counts: DiscordantCounts, level: float = 0.95) -> tuple[float, float]:
    """Score interval for a paired risk difference (Tango 1998)."""
    n, b, c = counts.n, counts.b, counts.c
    z = sps.norm.ppf(0.5 + level / 2)
    rd = (b - c) / n
    eps = 1e-12
    if rd >= 1 - eps:
        hi = 1.0
    else:
        hi = optimize.brentq(lambda d: _tango_z(d, b, c, n) + z, max(rd, -1 + eps), 1 - eps, xtol=1e-12)
    if rd <= -1 + eps:
        lo = -1.0
    else:
        lo = optimize.brentq(lambda d: _tango_z(d, b, c, n) - z, -1 + eps, min(rd, 1 - eps), xtol=1e-12)
    return lo, hi


def bootstrap_interval(counts: DiscordantCounts, level: float = 0.95, n_boot: int = 10_000, seed: int = 0) -> tuple[float, float]:
    """Percentile interval from multinomial resampling of the 2x2 cells."""
    n = counts.n
    probs = np.array([counts.b, counts.c, counts.n11, counts.n00], dtype=float) / n
    draws = np.random.default_rng(seed).multinomial(n, probs, size=n_boot)
    rds = (draws[:, 0] - draws[:, 1]) / n
    alpha = 1 - level
    return float(np.quantile(rds, alpha / 2)), float(np.quantile(rds, 1 - alpha / 2))


def rd_confidence_interval(counts: DiscordantCounts, level: float = 0.95, method: str = "score",
                           n_boot: int = 10_000, seed: int = 0) -> tuple[float, float]:
    if counts.n == 0:
        raise ValueError("interval undefined for n = 0")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if method == "score":
        return tango_interval(counts, level)
    if method == "bootstrap":
        return bootstrap_interval(counts, level, n_boot, seed)
    raise ValueError(f"unknown interval method {method!r}")


# -- cluster max-stat permutation -------------------------------------------

@dataclass
class PermutationResult:
    observed_max_rd: Fraction
    null_max_rds: np.ndarray
    count_ge: int
    n_perm: int
    perm_seed: int
    n_units: int
    flip_unit: str
    exhaustive: bool
    excluded_cells: list[tuple] = field(default_factory=list)
    argmax_cell: tuple | None = None
    defined: bool = True

    @property
    def p(self) -> Fraction:
        return Fraction(self.count_ge, self.n_perm)

    def p_display(self) -> str:
        if not self.defined:
            return "n/a"
        if self.count_ge == 0:
            return f"<{1 / self.n_perm:g}"
        return f"{float(self.p):.3f}"

    def summary(self) -> dict:
        return {
            "observed_max_rd": float(self.observed_max_rd),
            "observed_max_rd_pp": fmt_pp(self.observed_max_rd),
            "argmax_cell": list(self.argmax_cell) if self.argmax_cell else None,
            "p": float(self.p),
            "p_display": self.p_display(),
            "count_ge": self.count_ge,
            "n_perm": self.n_perm,
            "perm_seed": self.perm_seed,
            "n_units": self.n_units,
            "flip_unit": self.flip_unit,
            "exhaustive": self.exhaustive,
            "excluded_cells": [list(c) for c in self.excluded_cells],
            "defined": self.defined,
            "null_mean_rd": float(np.mean(self.null_max_rds)) if self.null_max_rds.size else None,
            "null_q95_rd": float(np.quantile(self.null_max_rds, 0.95)) if self.null_max_rds.size else None,
        }


MAX_EXHAUSTIVE_UNITS = 22


def _unit_index(pairs, flip_unit: str) -> tuple[np.ndarray, int]:
    if flip_unit == "pair":
        return np.arange(len(pairs)), len(pairs)
    if flip_unit != "cluster":
        raise ValueError("flip_unit must be 'cluster' or 'pair'")
    ids: dict[str, int] = {}
    idx = [ids.setdefault(p.scenario_cluster_id or p.scenario_id, len(ids)) for p in pairs]
    return np.asarray(idx, dtype=np.int64), len(ids)


def sign_patterns(n_units: int, n_perm: int, seed: int) -> np.ndarray:
    """One +-1 row per permutation, each from its own spawned stream."""
    children = np.random.SeedSequence(seed).spawn(n_perm)
    out = np.empty((n_perm, n_units), dtype=np.int8)
    for i, child in enumerate(children):
        out[i] = np.random.default_rng(child).integers(0, 2, size=n_units, dtype=np.int8) * 2 - 1
    return out


def all_sign_patterns(n_units: int) -> np.ndarray:
    if n_units > MAX_EXHAUSTIVE_UNITS:
        raise ValueError(f"exhaustive enumeration limited to {MAX_EXHAUSTIVE_UNITS} units")
    return np.array(list(itertools.product((1, -1), repeat=n_units)), dtype=np.int8).reshape(-1, n_units)


def cluster_max_stat_permutation(
    pairs,
    grid,
    c=DEPLOYED_COEFFICIENTS,
    n_perm: int = 1000,
    seed: int = 20260420,
    floor_fraction=DEPLOYED_FLOOR,
    parse_success=1,
    validity: ValidityThresholds = ValidityThresholds(),
    exhaustive: bool = False,
    flip_unit: str = "cluster",
    tensor: DecisionTensor | None = None,
) -> PermutationResult:
    """Family-wise p for the maximum cell RD over the grid.

    Each permutation swaps the original/factual labels of every pair in a
    randomly chosen subset of clusters; swapping negates that cluster's
    contribution to ``b - c`` in every cell. The validity-excluded cell set
    is fixed from the observed data. When every cell is excluded the test is
    undefined and the result carries p = 1 with ``defined=False``.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no pairs")
    points = list(getattr(grid, "points", grid))
    t = tensor or decision_tensor(pairs, points, c, floor_fraction)
    cells = cells_from_tensor(t, parse_success, validity)
    valid = np.array([not cr.validity_excluded for cr in cells])
    unit, n_units = _unit_index(pairs, flip_unit)
    if not valid.any():
        logger.warning("every grid cell is validity-excluded; permutation test undefined")
        return PermutationResult(Fraction(0), np.zeros(0), max(n_perm, 1), max(n_perm, 1), seed, n_units,
                                 flip_unit, exhaustive, [(g.lam, g.kappa) for g in points], None, False)
    diff = t.acc_orig.astype(np.int64) - t.acc_fact.astype(np.int64)
    deltas = np.zeros((len(points), n_units), dtype=np.int64)
    np.add.at(deltas.T, unit, diff.T)
    deltas = np.ascontiguousarray(deltas[valid])
    observed_num = deltas.sum(axis=1)
    best = int(np.argmax(observed_num))
    valid_points = [g for g, v in zip(points, valid) if v]

    if exhaustive:
        signs = all_sign_patterns(n_units)
        n_perm = signs.shape[0]
    else:
        if n_units == 1 and n_perm > 2:
            warnings.warn("a single cluster admits only 2 distinct relabelings", RuntimeWarning, stacklevel=2)
        signs = sign_patterns(n_units, n_perm, seed)
    null_num = np.asarray(kernels.flip_max(deltas, signs), dtype=np.int64)
    obs = int(observed_num[best])
    n = len(pairs)
    return PermutationResult(
        observed_max_rd=Fraction(obs, n),
        null_max_rds=null_num / n,
        count_ge=int((null_num >= obs).sum()),
        n_perm=n_perm,
        perm_seed=seed,
        n_units=n_units,
        flip_unit=flip_unit,
        exhaustive=exhaustive,
        excluded_cells=[(g.lam, g.kappa) for g, v in zip(points, valid) if not v],
        argmax_cell=(valid_points[best].lam, valid_points[best].kappa),
    )


# -- perception deltas ------------------------------------------------------

def holm_adjust(pvalues) -> list[float]:
    """Holm step-down adjusted p-values, in the input order."""
    p = [float(x) for x in pvalues]
    m = len(p)
    order = sorted(range(m), key=lambda i: p[i])
    adjusted = [0.0] * m
    running = 0.0
    for rank, i in enumerate(order):
        running = max(running, min(1.0, (m - rank) * p[i]))
        adjusted[i] = running
    return adjusted


def channel_deltas(pairs) -> dict[str, np.ndarray]:
    """Exact per-channel ``phi_orig - phi_fact`` rendered as floats."""
    out = {}
    for k, ch in enumerate(CHANNELS):
        out[ch] = np.array([
            float(to_fraction(p.original.phi.components()[k]) - to_fraction(p.factual.phi.components()[k]))
            for p in pairs
        ])
    return out


def holm_wilcoxon(pairs) -> dict[str, dict]:
    """Paired Wilcoxon per channel (zeros dropped), Holm over the four."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("holm_wilcoxon needs at least one pair")
    deltas = channel_deltas(pairs)
    raw = {}
    for ch, d in deltas.items():
        if not np.any(d != 0):
            raw[ch] = 1.0
        else:
            raw[ch] = float(sps.wilcoxon(d, zero_method="wilcox").pvalue)
    adj = holm_adjust([raw[ch] for ch in CHANNELS])
    return {
        ch: {"raw_p": raw[ch], "holm_p": a, "median_delta": float(np.median(deltas[ch])),
             "nonzero": int(np.count_nonzero(deltas[ch]))}
        for ch, a in zip(CHANNELS, adj)
    }


# -- subgroups and regimes --------------------------------------------------

STRATIFIERS = ("signal_weight", "regime")


@dataclass
class SubgroupRow:
    stratum: object
    cell: CellResult
    mcnemar_p: float
    exploratory: bool = True


@dataclass
class SubgroupAnalysis:
    stratifier: str
    rows: list[SubgroupRow]
    notes: list[str] = field(default_factory=list)


def subgroup_analysis(pairs, stratifier: str = "signal_weight", point=DEPLOYED_POINT,
                      c=DEPLOYED_COEFFICIENTS, floor_fraction=DEPLOYED_FLOOR, expected=None) -> SubgroupAnalysis:
    if stratifier not in STRATIFIERS:
        raise ValueError(f"stratifier must be one of {STRATIFIERS}")
    groups = defaultdict(list)
    for p in pairs:
        groups[getattr(p, stratifier)].append(p)
    rows, notes = [], []
    for key in sorted(set(groups) | set(expected or ())):
        if not groups.get(key):
            notes.append(f"{stratifier}={key}: no pairs, omitted")
            continue
        cell = paired_rd(groups[key], point, c, floor_fraction)
        rows.append(SubgroupRow(key, cell, cell.mcnemar_p))
    return SubgroupAnalysis(stratifier, rows, notes)


def classify_regimes(cells, alpha: float = 0.05, validity: ValidityThresholds = ValidityThresholds()) -> list[CellResult]:
    """Attach a diagnostic regime label to each cell (mutates and returns)."""
    for cell in cells:
        reason = ""
        if cell.parse_success < to_fraction(validity.parse_success_min):
            reason = "parse"
        elif cell.fact_accept_rate >= to_fraction(validity.fact_accept_ceiling):
            reason = "saturated"
        cell.validity_excluded = bool(reason)
        cell.exclusion_reason = reason
        if reason:
            cell.regime = "excluded"
        elif cell.mcnemar_p < alpha:
            cell.regime = "live"
        elif cell.rd > 0:
            cell.regime = "attenuated"
        else:
            cell.regime = "null"
    return cells
