"""Governance grid sweeps over frozen perceptions.

Every cell re-scores the same cached perception vectors; nothing here calls
a provider.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from ._exact import fmt_pp
from .stats import (
    CellResult,
    DecisionTensor,
    ValidityThresholds,
    cells_from_tensor,
    classify_regimes,
    decision_tensor,
)
from .welfare import CHANNELS, DEPLOYED_COEFFICIENTS, DEPLOYED_FLOOR, GovernancePoint, zero_coefficient

logger = logging.getLogger(__name__)

DEFAULT_LAMBDAS = (1, 2, 3, 5, 10, 20)
DEFAULT_KAPPAS = (0.01, 0.025, 0.05, 0.10, 0.20, 1.00)
ATTRIBUTION_LABEL = "not a causal mediation estimate"
GRID_COLUMNS = ("lambda", "kappa", "rd_pp", "b", "c", "n", "clip_rate_pct", "fact_acc_pct",
                "orig_acc_pct", "mcnemar_p", "excluded", "regime")


@dataclass(frozen=True)
class GridSpec:
    lambdas: tuple = DEFAULT_LAMBDAS
    kappas: tuple = DEFAULT_KAPPAS
    deployed: tuple = (1, 0.05)
    include_zero_lambda: bool = False

    def __post_init__(self):
        if not self.lambdas or not self.kappas:
            raise ValueError("grid axes must be nonempty")
        if self.deployed[0] not in self.lambdas or self.deployed[1] not in self.kappas:
            raise ValueError("deployed point must lie on the grid")

    @property
    def points(self) -> list[GovernancePoint]:
        lams = ((0,) if self.include_zero_lambda else ()) + tuple(self.lambdas)
        return [GovernancePoint(lam, kappa) for lam in lams for kappa in self.kappas]

    @property
    def deployed_point(self) -> GovernancePoint:
        return GovernancePoint(*self.deployed)

    def to_dict(self) -> dict:
        return {"lambdas": list(self.lambdas), "kappas": list(self.kappas),
                "deployed": list(self.deployed), "include_zero_lambda": self.include_zero_lambda}


DEFAULT_GRID = GridSpec()


@dataclass
class GridResult:
    cells: list[CellResult]
    tensor: DecisionTensor = field(repr=False)

    def cell(self, lam, kappa) -> CellResult:
        for c in self.cells:
            if c.point.lam == lam and c.point.kappa == kappa:
                return c
        raise KeyError((lam, kappa))

    def valid_cells(self) -> list[CellResult]:
        return [c for c in self.cells if not c.validity_excluded]

    def max_rd(self) -> Fraction | None:
        valid = self.valid_cells()
        return max(c.rd for c in valid) if valid else None

    def peak(self) -> CellResult | None:
        valid = self.valid_cells()
        return max(valid, key=lambda c: c.rd) if valid else None


def run_grid(
    pairs,
    grid: GridSpec = DEFAULT_GRID,
    c=DEPLOYED_COEFFICIENTS,
    floor_fraction=DEPLOYED_FLOOR,
    parse_success=1,
    validity: ValidityThresholds = ValidityThresholds(),
    alpha: float = 0.05,
) -> GridResult:
    pairs = list(pairs)
    if not pairs:
        raise ValueError("run_grid needs at least one pair")
    t = decision_tensor(pairs, grid.points, c, floor_fraction)
    cells = classify_regimes(cells_from_tensor(t, parse_success, validity), alpha, validity)
    return GridResult(cells, t)


@dataclass
class AttributionResult:
    channel: str
    max_rd: Fraction | None
    baseline_max_rd: Fraction | None

    @property
    def delta(self) -> Fraction | None:
        if self.max_rd is None or self.baseline_max_rd is None:
            return None
        return self.max_rd - self.baseline_max_rd

    def to_dict(self) -> dict:
        def f(x):
            return None if x is None else float(x)
        return {"channel": self.channel, "max_rd": f(self.max_rd), "baseline_max_rd": f(self.baseline_max_rd),
                "delta": f(self.delta), "label": ATTRIBUTION_LABEL}

    def describe(self) -> str:
        if self.max_rd is None or self.baseline_max_rd is None:
            return f"{self.channel}: every cell excluded"
        return f"{self.channel}: {fmt_pp(self.baseline_max_rd)} -> {fmt_pp(self.max_rd)} (delta {fmt_pp(self.delta)})"


def attribution_sweep(
    pairs,
    grid: GridSpec = DEFAULT_GRID,
    c=DEPLOYED_COEFFICIENTS,
    floor_fraction=DEPLOYED_FLOOR,
    channels=CHANNELS,
    parse_success=1,
    validity: ValidityThresholds = ValidityThresholds(),
) -> list[AttributionResult]:
    """Max RD over the grid with one coefficient zeroed, per channel."""
    pairs = list(pairs)
    baseline = run_grid(pairs, grid, c, floor_fraction, parse_success, validity).max_rd()
    out = []
    for ch in channels:
        zeroed = run_grid(pairs, grid, zero_coefficient(c, ch), floor_fraction, parse_success, validity)
        out.append(AttributionResult(ch, zeroed.max_rd(), baseline))
    return out


def clip_binding_map(pairs, grid: GridSpec = DEFAULT_GRID, c=DEPLOYED_COEFFICIENTS,
                     floor_fraction=DEPLOYED_FLOOR) -> dict[tuple, Fraction]:
    return binding_fractions(decision_tensor(list(pairs), grid.points, c, floor_fraction))


def binding_fractions(t: DecisionTensor) -> dict[tuple, Fraction]:
    """Share of the 2n evaluations per cell where the clip binds."""
    n2 = 2 * t.acc_orig.shape[1]
    return {
        (g.lam, g.kappa): Fraction(int(t.bind_orig[i].sum() + t.bind_fact[i].sum()), n2)
        for i, g in enumerate(t.points)
    }


def grid_rows(cells) -> list[dict]:
    return [{k: cell.row()[k] for k in GRID_COLUMNS} for cell in cells]


def grid_csv(cells) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=GRID_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(grid_rows(cells))
    return buf.getvalue()


def clipmap_csv(binding: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["lambda", "kappa", "binding_pct"])
    for (lam, kappa), frac in binding.items():
        writer.writerow([lam, kappa, round(float(frac) * 100, 4)])
    return buf.getvalue()


def write_grid(cells, path) -> Path:
    """Write ``path`` (CSV) and a JSON sibling with the same rows."""
    path = Path(path)
    path.write_text(grid_csv(cells), encoding="utf-8")
    path.with_suffix(".json").write_text(json.dumps({"cells": grid_rows(cells)}, indent=2) + "\n", encoding="utf-8")
    return path
