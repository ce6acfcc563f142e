"""One test per acceptance criterion; each prints a single PASS/FAIL line."""
import os
import random
import time
import timeit
from fractions import Fraction
from pathlib import Path

import pytest

from steeraudit._exact import fmt_pct, fmt_pp
from steeraudit.audit import analyze
from steeraudit.config import load_config
from steeraudit.gates import classify_refusal, compute_msgcap_stats, detect_id_leak, evaluate_gates
from steeraudit.harness import (
    REFERENCE_GATE_ROWS,
    bounded_phi_pairs,
    exchangeable_null_pairs,
    gate_fixture_msgcap,
    random_pairs,
    simulate_audit_pairs,
)
from steeraudit.market import (
    brute_force_ceiling,
    generate_small_market,
    oracle_welfare_ceiling,
    traveler_surplus,
)
from steeraudit.pairing import pair_up, read_raw_jsonl
from steeraudit.stats import (
    DiscordantCounts,
    cluster_max_stat_permutation,
    mcnemar_exact,
    paired_rd,
    subgroup_analysis,
)
from steeraudit.sweep import DEFAULT_GRID, DEFAULT_KAPPAS, DEFAULT_LAMBDAS, GridSpec, clip_binding_map, run_grid
from steeraudit.welfare import CHANNELS, DEPLOYED_COEFFICIENTS, RuleCoefficients, zero_coefficient

from .conftest import ACCEPTANCE_LINES
from .test_gates import CLEAN, V2_PHRASES
from .test_stats import _brute_force_perm_p
from .test_sweep import _zero_phi


def record(n: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_criterion_01_exact_mcnemar():
    cases = [((12, 1), 0.003418, 5e-5), ((5, 0), 0.0625, 0), ((8, 0), 0.0078125, 0),
             ((3, 0), 0.25, 0), ((1, 1), 1.0, 0)]
    ok, parts = True, []
    for (b, c), expected, tol in cases:
        p = mcnemar_exact(b, c)
        per_call = min(timeit.repeat(lambda: mcnemar_exact(b, c), number=100, repeat=5)) / 100
        good = abs(p - expected) <= tol and per_call < 1e-3
        ok &= good
        parts.append(f"({b},{c})->{p:.7g}")
    record(1, ok, "exact McNemar " + ", ".join(parts) + "; each < 1 ms")


def test_criterion_02_rd_arithmetic():
    k = DiscordantCounts.from_margins(143, 81, 70, 12, 1)
    rows = [
        (fmt_pct(Fraction(k.orig_accepts, k.n)), "56.64%"),
        (fmt_pct(Fraction(k.fact_accepts, k.n)), "48.95%"),
        (fmt_pp(k.rd), "+7.69pp"),
        (fmt_pp(Fraction(8, 55)), "+14.55pp"),
        (fmt_pp(Fraction(5, 143)), "+3.50pp"),
        (fmt_pp(Fraction(8, 270)), "+2.96pp"),
    ]
    ok = all(got == want for got, want in rows) and abs(float(k.rd) * 100 - 7.69) <= 0.005
    record(2, ok, "RD arithmetic " + ", ".join(got for got, _ in rows))


def test_criterion_03_nullification():
    pairs = random_pairs(2026, n=1000)
    grid = GridSpec(lambdas=(0,) + DEFAULT_LAMBDAS, kappas=(0,) + DEFAULT_KAPPAS, deployed=(1, 0.05))
    cells = run_grid(pairs, grid).cells
    nulled = [c for c in cells if c.point.lam == 0 or c.point.kappa == 0]
    ok = len(nulled) == 13 and all(c.rd == 0 for c in nulled)
    record(3, ok, f"RD = 0 exactly in {sum(c.rd == 0 for c in nulled)}/{len(nulled)} cells with lambda=0 or kappa=0"
                  f" (1000 random pairs)")


def test_criterion_04_clip_diagnostic():
    pairs = bounded_phi_pairs(0)
    fractions = clip_binding_map(pairs)
    deployed = fractions[(1, 0.05)]
    n2 = 2 * len(pairs)
    mono_lam = all(
        [fractions[(lam, k)] for lam in DEFAULT_LAMBDAS] == sorted(fractions[(lam, k)] for lam in DEFAULT_LAMBDAS)
        for k in DEFAULT_KAPPAS)
    anti_kappa = all(
        [fractions[(lam, k)] for k in DEFAULT_KAPPAS]
        == sorted((fractions[(lam, k)] for k in DEFAULT_KAPPAS), reverse=True)
        for lam in DEFAULT_LAMBDAS)
    ok = deployed == 0 and mono_lam and anti_kappa
    record(4, ok, f"deployed binding {int(deployed * n2)}/{n2}; monotone in lambda {mono_lam}, "
                  f"anti-monotone in kappa {anti_kappa}")


def test_criterion_05_permutation():
    exact_ok = True
    for seed, k in ((0, 4), (1, 7), (2, 10)):
        pairs = random_pairs(seed, n=4 * k, n_clusters=k)
        points = DEFAULT_GRID.points[::5]
        res = cluster_max_stat_permutation(pairs, points, exhaustive=True)
        exact_ok &= res.p == _brute_force_perm_p(pairs, points)[0]

    reps = 200
    rejections = sum(
        cluster_max_stat_permutation(exchangeable_null_pairs(r), DEFAULT_GRID.points, n_perm=1000, seed=r).p < 0.05
        for r in range(reps)
    )
    rate = rejections / reps

    pairs = simulate_audit_pairs(0, n_pairs=143)
    start = time.perf_counter()
    cluster_max_stat_permutation(pairs, DEFAULT_GRID.points, n_perm=1000)
    elapsed = time.perf_counter() - start
    ok = exact_ok and 0.02 <= rate <= 0.09 and elapsed < 60
    record(5, ok, f"exhaustive == enumeration {exact_ok}; null rejection {rate:.3f} over {reps} reps; "
                  f"143 pairs x 36 cells x 1000 perms in {elapsed:.2f}s")


def test_criterion_06_power():
    n_perm = 1000
    detected = 0
    for seed in range(50):
        out_pairs = simulate_audit_pairs(seed, n_pairs=300, steering=0.6)
        cell = paired_rd(out_pairs)
        perm = cluster_max_stat_permutation(out_pairs, DEFAULT_GRID.points, n_perm=n_perm, seed=seed)
        detected += cell.mcnemar_p < 0.05 and perm.p < 0.05
    quiet = 0
    for seed in range(50):
        out_pairs = simulate_audit_pairs(seed, n_pairs=300, steering=0.0)
        cell = paired_rd(out_pairs)
        perm = cluster_max_stat_permutation(out_pairs, DEFAULT_GRID.points, n_perm=n_perm, seed=seed)
        quiet += cell.mcnemar_p > 0.05 and perm.p > 0.05
    ok = detected >= 45 and quiet >= 45
    record(6, ok, f"s=0.6 detected in {detected}/50 seeds; s=0 quiet in {quiet}/50 seeds (n=300)")


def _stats_from_table(t):
    from steeraudit.gates import GateStats
    f = lambda pct: Fraction(str(pct)) / 100  # noqa: E731
    return GateStats(f(t.json_pct), f(t.cov_pct), t.wc, f(t.ref_pct), f(t.uq_pct), f(t.lk_pct), 100, 90)


def test_criterion_07_gate_verdicts():
    ok, parts = True, []
    for label, (target, verdict) in REFERENCE_GATE_ROWS.items():
        from_table = evaluate_gates(_stats_from_table(target)).verdict
        from_fixture = evaluate_gates(compute_msgcap_stats(gate_fixture_msgcap(target), {"b1", "b2", "b3"})).verdict
        ok &= from_table == from_fixture == verdict
        parts.append(f"{label}={from_fixture}")
    record(7, ok, "; ".join(parts))


def test_criterion_08_classifiers():
    rng = random.Random(8)
    flagged = 0
    for phrase in V2_PHRASES:
        variants = [phrase.upper(), phrase.title(),
                    "".join(ch.upper() if rng.random() < 0.5 else ch for ch in phrase)]
        flagged += all(classify_refusal(f"Hello. {v} today.") for v in variants)
    leaks = detect_id_leak("take b12") and detect_id_leak("for t3 now")
    clean = CLEAN.read_text().splitlines()
    false_flags = sum(classify_refusal(m) or detect_id_leak(m) for m in clean)
    ok = flagged == 11 and leaks and len(clean) == 50 and false_flags == 0
    record(8, ok, f"{flagged}/11 v2 phrases flagged under mixed casing; b12/t3 flagged {leaks}; "
                  f"{false_flags} false flags on {len(clean)} clean messages")


def test_criterion_09_oracle_welfare():
    equal = dominated = 0
    for seed in range(100):
        m = generate_small_market(seed, ("loose", "tight")[seed % 2])
        assert len(m.travelers) <= 6 and len(m.bundles) <= 10
        best, alloc = oracle_welfare_ceiling(m)
        equal += best == brute_force_ceiling(m) == traveler_surplus(m, alloc)
        rng = random.Random(seed)
        ok_market = True
        for _ in range(1000):
            cap = {b.bundle_id: b.capacity for b in m.bundles}
            alloc = {}
            for t in m.travelers:
                pick = rng.choice([bid for bid, c in cap.items() if c > 0] + [None])
                if pick:
                    cap[pick] -= 1
                alloc[t.traveler_id] = pick
            ok_market &= traveler_surplus(m, alloc) <= best
        dominated += ok_market
    record(9, equal == 100 and dominated == 100,
           f"branch-and-bound == enumeration on {equal}/100 markets; ceiling >= 1000 random allocations "
           f"on {dominated}/100")


def test_criterion_10_attribution_laws():
    equal_cells = total_cells = 0
    for seed in range(3):
        pairs = random_pairs(100 + seed, n=300)
        for ch in CHANNELS:
            a = run_grid(pairs, DEFAULT_GRID, zero_coefficient(DEPLOYED_COEFFICIENTS, ch)).cells
            b = run_grid(_zero_phi(pairs, ch), DEFAULT_GRID).cells
            equal_cells += sum(x.counts == y.counts for x, y in zip(a, b))
            total_cells += len(a)
    zero_all = run_grid(random_pairs(7, n=300), DEFAULT_GRID, RuleCoefficients(0, 0, 0, 0)).cells
    all_zero = all(c.rd == 0 for c in zero_all)
    record(10, equal_cells == total_cells and all_zero,
           f"coefficient-zero == phi-zero in {equal_cells}/{total_cells} cells; all-zero rule RD=0 in every cell "
           f"{all_zero}")


def check_release(path) -> tuple[bool, str]:
    records, ingest = read_raw_jsonl(path)
    pairs3 = pair_up(records, "tuple3").pairs
    out = analyze(pairs3, load_config(), n_perm=1000, parse_success=ingest.parse_success)
    k = out.reading.counts
    head_ok = (fmt_pp(k.rd) == "+7.69pp" and (k.b, k.c, k.n) == (12, 1, 143)
               and f"{out.reading.mcnemar_p:.4f}" == "0.0034")
    expected = {0.25: (46, "+6.52pp", 3, 0, "0.25"), 0.5: (42, "+0.00pp", 1, 1, "1.00"),
                0.75: (55, "+14.55pp", 8, 0, "0.0078")}
    sg = subgroup_analysis(pairs3, "signal_weight")
    got = {float(r.stratum): (r.cell.counts.n, fmt_pp(r.cell.rd), r.cell.counts.b, r.cell.counts.c,
                              f"{r.mcnemar_p:.2f}" if r.mcnemar_p >= 0.01 else f"{r.mcnemar_p:.4f}")
           for r in sg.rows}
    strata_ok = got == expected
    n5 = len(pair_up(records, "tuple5").pairs)
    detail = (f"{fmt_pp(k.rd)} {k.b}/{k.c} n={k.n} p={out.reading.mcnemar_p:.4f}; "
              f"signal-weight strata match {strata_ok}; tuple5 n={n5}")
    return head_ok and strata_ok and n5 == 409, detail


def test_criterion_11_released_data():
    path = os.environ.get("STEERAUDIT_RELEASED_RAW")
    if not path or not Path(path).is_file():
        line = ("[SKIP] criterion 11: released raw JSONL not supplied; "
                "set STEERAUDIT_RELEASED_RAW=<path to *_report.with_episode_seed.raw.jsonl>")
        ACCEPTANCE_LINES.append(line)
        print(line)
        pytest.skip(line)
    ok, detail = check_release(path)
    record(11, ok, detail)
