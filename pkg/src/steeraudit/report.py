"""Markdown compliance report and its machine-readable sibling.

``report_data`` builds every value shown in the report, already formatted;
``render_report`` only lays those strings out, so no number appears in the
markdown that is absent from the JSON.
"""
from __future__ import annotations

import json
from pathlib import Path

from ._exact import fmt_pct, fmt_pp
from .gates import gate_table_markdown
from .stats import format_p
from .sweep import ATTRIBUTION_LABEL, binding_fractions, clipmap_csv, grid_rows, write_grid


def _pp_or_na(x) -> str:
    return "n/a" if x is None else fmt_pp(x)


def _ci(ci) -> str:
    return f"[{ci[0] * 100:+.2f}, {ci[1] * 100:+.2f}]pp"


def report_data(outcome) -> dict:
    r = outcome.reading
    d = outcome.deployed
    per100 = f"{float(r.delta_acc) * 100:.1f}"
    data = {
        "status": "VALID" if r.valid else "INVALID",
        "invalid_reasons": list(r.invalid_reasons),
        "governance_point": r.point.label(),
        "delta_acc": float(r.delta_acc),
        "delta_acc_pp": fmt_pp(r.delta_acc),
        "per_100_sessions": per100,
        "n": r.n,
        "b": r.counts.b,
        "c": r.counts.c,
        "orig_accept_pct": fmt_pct(d.orig_accept_rate),
        "fact_accept_pct": fmt_pct(d.fact_accept_rate),
        "mcnemar_p": r.mcnemar_p,
        "mcnemar_p_display": format_p(r.mcnemar_p),
        "ci_score_pp": _ci(outcome.ci_score),
        "ci_bootstrap_pp": _ci(outcome.ci_bootstrap),
        "clip_rate_pct": fmt_pct(d.clip_rate, 1),
        "parse_success_pct": fmt_pct(outcome.parse_success, 1),
        "permutation": outcome.reading.permutation.summary(),
        "gates": r.gate_vector.to_dict() if r.gate_vector else None,
        "grid": [
            {**row, "rd_display": f"{row['rd_pp']:+.2f}pp", "fact_acc_display": f"{row['fact_acc_pct']:.2f}%"}
            for row in grid_rows(outcome.grid.cells)
        ],
        "attribution": [
            {**a.to_dict(), **{f"{k}_display": _pp_or_na(getattr(a, k)) for k in ("max_rd", "baseline_max_rd", "delta")}}
            for a in outcome.attribution
        ],
        "attribution_label": ATTRIBUTION_LABEL,
        "subgroups": [
            {
                "stratifier": sg.stratifier,
                "notes": sg.notes,
                "rows": [
                    {"stratum": str(row.stratum), "n": row.cell.counts.n, "b": row.cell.counts.b,
                     "c": row.cell.counts.c, "rd_pp": fmt_pp(row.cell.rd), "mcnemar_p": row.mcnemar_p,
                     "mcnemar_p_display": format_p(row.mcnemar_p), "exploratory": row.exploratory}
                    for row in sg.rows
                ],
            }
            for sg in outcome.subgroups
        ],
        "wilcoxon": {
            ch: {**v, "holm_p_display": format_p(v["holm_p"]), "median_delta_display": f"{v['median_delta']:+.4f}"}
            for ch, v in outcome.wilcoxon.items()
        },
        "gates_table": (gate_table_markdown([("audited producer", r.gate_vector)]) if r.gate_vector else None),
        "manifest_hash": r.manifest_hash,
        "manifest": outcome.manifest.to_dict(),
    }
    data["verdict_sentence"] = (
        f"At {data['governance_point']} the audited deployment shows a paired steering effect of "
        f"{data['delta_acc_pp']} (b/c = {data['b']}/{data['c']}, n = {data['n']}, exact McNemar "
        f"p = {data['mcnemar_p_display']}): about {per100} more accepted recommendations per 100 paired "
        f"traveler sessions with the producer's message than with the factual template."
    )
    return data


def render_report(data: dict) -> str:
    lines = []
    if data["status"] == "INVALID":
        lines.append(f"> **INVALID READING**: validity gate breached: {'; '.join(data['invalid_reasons'])}")
        lines.append("")
    lines.append(data["verdict_sentence"])
    lines.append("")
    lines.append(f"Manifest hash: `{data['manifest_hash']}`")
    lines.append("")

    lines.append("## Primary endpoint")
    lines.append("")
    lines.append("| Point | n | b/c | orig / fact acc | RD | 95% CI (score) | 95% CI (bootstrap) | McNemar p |")
    lines.append("|---|---:|---:|---:|---:|---:|---:|---:|")
    lines.append(
        f"| {data['governance_point']} | {data['n']} | {data['b']}/{data['c']} | "
        f"{data['orig_accept_pct']} / {data['fact_accept_pct']} | {data['delta_acc_pp']} | "
        f"{data['ci_score_pp']} | {data['ci_bootstrap_pp']} | {data['mcnemar_p_display']} |"
    )
    lines.append("")
    lines.append(f"Parse success: {data['parse_success_pct']}. Clip binding at the deployed point: "
                 f"{data['clip_rate_pct']}.")
    lines.append("")

    p = data["permutation"]
    lines.append("## Grid max-statistic permutation")
    lines.append("")
    lines.append("| Max RD | Cell | Permutations | Units | Flip unit | p |")
    lines.append("|---:|---|---:|---:|---|---:|")
    cell = "n/a" if p["argmax_cell"] is None else f"(λ={p['argmax_cell'][0]:g}, κ={p['argmax_cell'][1]:g})"
    lines.append(f"| {p['observed_max_rd_pp']} | {cell} | {p['n_perm']} | {p['n_units']} | {p['flip_unit']} | "
                 f"{p['p_display']} |")
    lines.append("")
    lines.append("Grid cells are in `grid.csv` / `grid.json`; the null distribution is in `null_distribution.json`.")
    lines.append("")

    if data["gates"]:
        g = data["gates"]
        lines.append("## Producer text gates")
        lines.append("")
        lines.append(data["gates_table"].rstrip("\n"))
        lines.append("")
        lines.append(f"Gate verdict: {g['verdict']}")
        lines.append("")

    lines.append("## Perception deltas (Holm-corrected Wilcoxon)")
    lines.append("")
    lines.append("| Channel | Nonzero deltas | Median delta | Holm p |")
    lines.append("|---|---:|---:|---:|")
    for ch, v in data["wilcoxon"].items():
        lines.append(f"| {ch} | {v['nonzero']} | {v['median_delta_display']} | {v['holm_p_display']} |")
    lines.append("")

    lines.append("## Diagnostics (exploratory)")
    lines.append("")
    lines.append("Regime labels by cell:")
    lines.append("")
    lines.append("| λ | κ | RD | b/c | fact acc | regime |")
    lines.append("|---:|---:|---:|---:|---:|---|")
    for row in data["grid"]:
        lines.append(f"| {row['lambda']:g} | {row['kappa']:g} | {row['rd_display']} | {row['b']}/{row['c']} | "
                     f"{row['fact_acc_display']} | {row['regime']} |")
    lines.append("")
    subgroups = [sg for sg in data["subgroups"] if sg["rows"]]
    for sg in subgroups:
        lines.append(f"Subgroups by {sg['stratifier']} (exploratory):")
        lines.append("")
        lines.append("| Stratum | n | b/c | RD | McNemar p |")
        lines.append("|---|---:|---:|---:|---:|")
        for row in sg["rows"]:
            lines.append(f"| {row['stratum']} | {row['n']} | {row['b']}/{row['c']} | {row['rd_pp']} | "
                         f"{row['mcnemar_p_display']} |")
        for note in sg["notes"]:
            lines.append(f"\n{note}")
        lines.append("")
    lines.append(f"Coefficient-zero attribution ({data['attribution_label']}):")
    lines.append("")
    lines.append("| Channel zeroed | Max RD | Baseline max RD | Delta |")
    lines.append("|---|---:|---:|---:|")
    for a in data["attribution"]:
        lines.append(f"| {a['channel']} | {a['max_rd_display']} | {a['baseline_max_rd_display']} | "
                     f"{a['delta_display']} |")
    lines.append("")
    return "\n".join(lines)


def build_report(outcome) -> tuple[str, dict]:
    data = report_data(outcome)
    return render_report(data), data


def write_outputs(outcome, directory) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    md, data = build_report(outcome)
    (out / "report.md").write_text(md, encoding="utf-8")
    (out / "report.json").write_text(json.dumps(data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    (out / "manifest.json").write_text(json.dumps(outcome.manifest.to_dict(), indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    write_grid(outcome.grid.cells, out / "grid.csv")
    (out / "clipmap.csv").write_text(clipmap_csv(binding_fractions(outcome.grid.tensor)), encoding="utf-8")
    perm = outcome.reading.permutation
    (out / "null_distribution.json").write_text(
        json.dumps({"observed_max_rd": float(perm.observed_max_rd), "null_max_rd": perm.null_max_rds.tolist()}) + "\n",
        encoding="utf-8")
    return out
