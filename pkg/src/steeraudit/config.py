"""Frozen run configuration loaded from a TOML document.

The packaged ``round20.toml`` holds the deployed values. A user file is
merged on top of it and every key that differs is listed in
``AuditConfig.overrides`` so it can be recorded in the run manifest.
"""
from __future__ import annotations

import copy
import hashlib
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from .gates import GateThresholds
from .pairing import WindowSpec
from .stats import ValidityThresholds
from .sweep import GridSpec
from .welfare import GovernancePoint, RuleCoefficients


def _default_text() -> str:
    return resources.files(__package__).joinpath("data", "round20.toml").read_text(encoding="utf-8")


def _merge(base: dict, extra: dict, prefix: str, changed: list[str]) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v, key + ".", changed)
        else:
            if out.get(k) != v:
                changed.append(key)
            out[k] = v
    return out


@dataclass
class AuditConfig:
    data: dict
    sha256: str
    overrides: list[str] = field(default_factory=list)
    source: str = "round20.toml"

    @property
    def coefficients(self) -> RuleCoefficients:
        return RuleCoefficients(**self.data["rule"]["coefficients"])

    @property
    def point(self) -> GovernancePoint:
        r = self.data["rule"]
        return GovernancePoint(r["lambda"], r["kappa"])

    @property
    def floor_fraction(self) -> float:
        return self.data["rule"]["floor_fraction"]

    @property
    def grid(self) -> GridSpec:
        g = self.data["grid"]
        r = self.data["rule"]
        return GridSpec(tuple(g["lambdas"]), tuple(g["kappas"]), (r["lambda"], r["kappa"]),
                        bool(g.get("include_zero_lambda", False)))

    def window(self, name: str = "diagnostic", lower=None, upper=None, cap=None) -> WindowSpec:
        """Named window; ``custom`` requires explicit bounds."""
        if name == "custom":
            if lower is None or upper is None:
                raise ValueError("a custom window needs both lower and upper bounds")
            base = self.data["window"]["diagnostic"]
            return WindowSpec(lower, upper, base.get("per_stratum_target", 100), cap,
                              base.get("sample_seed", 42), "custom")
        spec = self.data["window"].get(name)
        if spec is None:
            raise ValueError(f"unknown window {name!r}")
        if spec.get("unspecified"):
            raise ValueError(f"window {name!r} has no published bounds; use --window custom")
        return WindowSpec(spec["lower_fraction"], spec["upper_fraction"], spec.get("per_stratum_target", 100),
                          cap if cap is not None else spec.get("per_stratum_cap"),
                          spec.get("sample_seed", 42), name)

    @property
    def validity(self) -> ValidityThresholds:
        return ValidityThresholds(**self.data["validity"])

    @property
    def gate_thresholds(self) -> GateThresholds:
        return GateThresholds.from_mapping(self.data["gates"])

    @property
    def n_perm(self) -> int:
        return int(self.data["permutation"]["n_perm"])

    @property
    def perm_seed(self) -> int:
        return int(self.data["permutation"]["seed"])

    @property
    def alpha(self) -> float:
        return float(self.data["permutation"]["alpha"])

    def with_overrides(self, **dotted) -> "AuditConfig":
        """Return a copy with ``section.key=value`` overrides applied."""
        extra: dict = {}
        for dotted_key, value in dotted.items():
            node = extra
            parts = dotted_key.split(".")
            for p in parts[:-1]:
                node = node.setdefault(p, {})
            node[parts[-1]] = value
        changed = list(self.overrides)
        data = _merge(self.data, extra, "", changed)
        return AuditConfig(data, self.sha256, changed, self.source)

    def manifest(self) -> dict:
        return {"source": self.source, "sha256": self.sha256, "overrides": sorted(set(self.overrides))}


def load_config(path=None) -> AuditConfig:
    default_text = _default_text()
    base = tomllib.loads(default_text)
    if path is None:
        return AuditConfig(base, hashlib.sha256(default_text.encode()).hexdigest())
    raw = Path(path).read_bytes()
    changed: list[str] = []
    data = _merge(base, tomllib.loads(raw.decode("utf-8")), "", changed)
    return AuditConfig(data, hashlib.sha256(raw).hexdigest(), changed, str(path))
