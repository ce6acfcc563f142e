import itertools
import math
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize, stats as sps
from statsmodels.stats.contingency_tables import mcnemar as sm_mcnemar
from statsmodels.stats.multitest import multipletests

from steeraudit.harness import exchangeable_null_pairs, planted_channel_pairs, random_pairs
from steeraudit.stats import (
    DiscordantCounts,
    ValidityThresholds,
    classify_regimes,
    cluster_max_stat_permutation,
    decision_tensor,
    cells_from_tensor,
    format_p,
    holm_adjust,
    holm_wilcoxon,
    mcnemar_exact,
    mcnemar_exact_fraction,
    paired_rd,
    rd_confidence_interval,
    subgroup_analysis,
)
from steeraudit.sweep import DEFAULT_GRID
from steeraudit.welfare import DEPLOYED_POINT, EconomicState, GovernancePoint, accept


# -- McNemar ----------------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(st.integers(0, 60), st.integers(0, 60))
def test_mcnemar_matches_binomial_test(b, c):
    p = mcnemar_exact(b, c)
    if b + c == 0:
        assert p == 1.0
    else:
        assert p == pytest.approx(sps.binomtest(b, b + c, 0.5).pvalue, rel=1e-12)
        assert p == pytest.approx(sm_mcnemar([[0, b], [c, 0]], exact=True).pvalue, rel=1e-12)


def test_mcnemar_exact_values():
    assert mcnemar_exact_fraction(5, 0) == Fraction(1, 16)
    assert mcnemar_exact_fraction(8, 0) == Fraction(1, 128)
    assert mcnemar_exact_fraction(1, 1) == 1
    assert mcnemar_exact_fraction(12, 1) == Fraction(14, 4096)
    assert format_p(0.00341796875) == "0.0034"


def test_counts_from_margins():
    k = DiscordantCounts.from_margins(143, 81, 70, 12, 1)
    assert (k.n, k.orig_accepts, k.fact_accepts) == (143, 81, 70)
    assert k.rd == Fraction(11, 143)
    with pytest.raises(ValueError):
        DiscordantCounts.from_margins(10, 5, 2, 1, 1)


def test_counts_from_decisions():
    k = DiscordantCounts.from_decisions([1, 1, 0, 0, 1], [1, 0, 1, 0, 0])
    assert (k.b, k.c, k.n11, k.n00) == (2, 1, 1, 1)


# -- intervals --------------------------------------------------------------

def _oracle_score_interval(b, c, n, level=0.95):
    """Score interval with the restricted MLE found by numerical maximisation."""
    z = sps.norm.ppf(0.5 + level / 2)
    rest = n - b - c

    def stat(d):
        lo, hi = max(0.0, -d), (1 - d) / 2

        def nll(q):
            terms = 0.0
            for k, p in ((b, q + d), (c, q), (rest, 1 - 2 * q - d)):
                if k:
                    terms += k * math.log(max(p, 1e-300))
            return -terms

        q = optimize.minimize_scalar(nll, bounds=(lo, hi), method="bounded",
                                     options={"xatol": 1e-13}).x
        return (b - c - n * d) / math.sqrt(n * (2 * q + d - d * d))

    rd = (b - c) / n
    hi = optimize.brentq(lambda d: stat(d) + z, rd, 1 - 1e-9, xtol=1e-12)
    lo = optimize.brentq(lambda d: stat(d) - z, -1 + 1e-9, rd, xtol=1e-12)
    return lo, hi


@pytest.mark.parametrize("b,c,n", [(12, 1, 143), (8, 0, 55), (5, 0, 143), (8, 0, 270), (7, 9, 60), (30, 2, 80)])
def test_score_interval_matches_numerical_mle(b, c, n):
    lo, hi = rd_confidence_interval(DiscordantCounts(b, c, n - b - c, 0))
    olo, ohi = _oracle_score_interval(b, c, n)
    assert lo == pytest.approx(olo, abs=1e-6)
    assert hi == pytest.approx(ohi, abs=1e-6)


def test_score_interval_brackets_headline_point():
    lo, hi = rd_confidence_interval(DiscordantCounts.from_margins(143, 81, 70, 12, 1))
    assert lo < 11 / 143 < hi
    assert lo > 0


def test_degenerate_interval_shrinks_with_n():
    widths = []
    for n in (100, 400, 1600):
        lo, hi = rd_confidence_interval(DiscordantCounts(0, 0, n // 2, n - n // 2))
        assert lo < 0 < hi
        widths.append(hi - lo)
    assert widths[0] > widths[1] > widths[2]


def test_bootstrap_interval():
    k = DiscordantCounts(12, 1, 69, 61)
    a = rd_confidence_interval(k, method="bootstrap", seed=3)
    assert a == rd_confidence_interval(k, method="bootstrap", seed=3)
    assert a[0] < float(k.rd) < a[1]
    with pytest.raises(ValueError):
        rd_confidence_interval(k, method="wald")
    with pytest.raises(ValueError):
        rd_confidence_interval(k, level=1.5)


# -- decision tensor --------------------------------------------------------

def test_tensor_matches_direct_rule():
    pairs = random_pairs(1, n=60, n_clusters=6)
    points = DEFAULT_GRID.points
    t = decision_tensor(pairs, points)
    for i, g in enumerate(points):
        for j, p in enumerate(pairs):
            for rec, acc in ((p.original, t.acc_orig), (p.factual, t.acc_fact)):
                s = EconomicState(rec.baseline_surplus, 0, rec.budget, rec.tau)
                assert bool(acc[i, j]) == accept(rec.phi, s, g=g)


def test_paired_rd_and_validity():
    pairs = random_pairs(2, n=100)
    cell = paired_rd(pairs)
    assert cell.rd == Fraction(cell.counts.b - cell.counts.c, 100)
    bad = paired_rd(pairs, parse_success=Fraction(90, 100))
    assert bad.validity_excluded and bad.exclusion_reason == "parse"
    with pytest.raises(ValueError):
        paired_rd([])


# -- permutation ------------------------------------------------------------

def _brute_force_perm_p(pairs, points, validity=ValidityThresholds()):
    """Enumerate every cluster relabelling, recomputing each cell from scratch."""
    clusters = sorted({p.scenario_id for p in pairs})
    acc = {}
    for i, g in enumerate(points):
        for j, p in enumerate(pairs):
            for v, rec in (("o", p.original), ("f", p.factual)):
                s = EconomicState(rec.baseline_surplus, 0, rec.budget, rec.tau)
                acc[i, j, v] = accept(rec.phi, s, g=g)
    n = len(pairs)
    valid = []
    for i in range(len(points)):
        fact_rate = Fraction(sum(acc[i, j, "f"] for j in range(n)), n)
        valid.append(fact_rate < Fraction(repr(validity.fact_accept_ceiling)))

    def max_rd(flipped):
        best = None
        for i in range(len(points)):
            if not valid[i]:
                continue
            diff = 0
            for j, p in enumerate(pairs):
                o, f = acc[i, j, "o"], acc[i, j, "f"]
                if p.scenario_id in flipped:
                    o, f = f, o
                diff += o - f
            best = diff if best is None else max(best, diff)
        return Fraction(best, n)

    observed = max_rd(set())
    count = 0
    for mask in itertools.product((False, True), repeat=len(clusters)):
        flipped = {cl for cl, m in zip(clusters, mask) if m}
        count += max_rd(flipped) >= observed
    return Fraction(count, 2 ** len(clusters)), observed


@pytest.mark.parametrize("seed,k", [(0, 3), (1, 6), (2, 8)])
def test_exhaustive_matches_enumeration(seed, k):
    pairs = random_pairs(seed, n=5 * k, n_clusters=k)
    points = [GovernancePoint(l, kp) for l in (1, 5, 20) for kp in (0.01, 0.05, 1.0)]
    res = cluster_max_stat_permutation(pairs, points, exhaustive=True)
    p, observed = _brute_force_perm_p(pairs, points)
    assert res.n_perm == 2 ** k
    assert res.p == p
    assert res.observed_max_rd == observed


def test_monte_carlo_is_seeded():
    pairs = random_pairs(5, n=200, n_clusters=20)
    a = cluster_max_stat_permutation(pairs, DEFAULT_GRID.points, n_perm=200, seed=9)
    b = cluster_max_stat_permutation(pairs, DEFAULT_GRID.points, n_perm=200, seed=9)
    assert a.p == b.p and np.array_equal(a.null_max_rds, b.null_max_rds)
    # growing n_perm keeps the first draws
    c = cluster_max_stat_permutation(pairs, DEFAULT_GRID.points, n_perm=300, seed=9)
    assert np.array_equal(c.null_max_rds[:200], a.null_max_rds)


def test_pair_level_flips():
    pairs = random_pairs(6, n=12, n_clusters=2)
    res = cluster_max_stat_permutation(pairs, DEFAULT_GRID.points[:4], exhaustive=True, flip_unit="pair")
    assert res.n_units == 12 and res.n_perm == 4096
    with pytest.raises(ValueError):
        cluster_max_stat_permutation(pairs, DEFAULT_GRID.points, flip_unit="traveler")


def test_single_cluster_warns():
    pairs = random_pairs(6, n=10, n_clusters=1)
    with pytest.warns(RuntimeWarning):
        cluster_max_stat_permutation(pairs, DEFAULT_GRID.points, n_perm=10)


def test_p_display():
    pairs = planted_channel_pairs(0, n=200)
    res = cluster_max_stat_permutation(pairs, DEFAULT_GRID.points, n_perm=100)
    assert res.count_ge == 0 and res.p_display() == "<0.01"


def test_all_cells_excluded_is_undefined():
    pairs = random_pairs(7, n=40, n_clusters=4)
    res = cluster_max_stat_permutation(pairs, DEFAULT_GRID.points, n_perm=50, parse_success=Fraction(1, 2))
    assert not res.defined and res.p == 1 and res.p_display() == "n/a"
    assert len(res.excluded_cells) == 36


def test_null_rejection_rate_small():
    rejections = sum(
        cluster_max_stat_permutation(exchangeable_null_pairs(s), DEFAULT_GRID.points, n_perm=200, seed=s).p < 0.05
        for s in range(40)
    )
    assert rejections <= 8


# -- perception deltas ------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(1e-6, 1.0), min_size=1, max_size=8))
def test_holm_matches_statsmodels(pvals):
    expected = multipletests(pvals, method="holm")[1]
    assert holm_adjust(pvals) == pytest.approx(list(expected), abs=1e-12)


def test_wilcoxon_detects_planted_channel():
    res = holm_wilcoxon(planted_channel_pairs(1, "trust", n=80))
    assert res["trust"]["holm_p"] < 1e-6
    for ch in ("fit", "risk", "urgency"):
        assert res[ch]["nonzero"] == 0 and res[ch]["raw_p"] == 1.0
    assert res["trust"]["median_delta"] == pytest.approx(0.5, abs=0.05)


# -- subgroups and regimes --------------------------------------------------

def test_subgroups_partition_pairs():
    pairs = random_pairs(3, n=300)
    sg = subgroup_analysis(pairs, "signal_weight", expected=(0.25, 0.5, 0.75, 0.9))
    assert sum(r.cell.counts.n for r in sg.rows) == 300
    assert any("0.9" in note for note in sg.notes)
    assert all(r.exploratory for r in sg.rows)
    with pytest.raises(ValueError):
        subgroup_analysis(pairs, "budget")


def test_regime_labels():
    t = decision_tensor(planted_channel_pairs(2, n=200), DEFAULT_GRID.points)
    cells = classify_regimes(cells_from_tensor(t))
    labels = {c.regime for c in cells}
    assert labels <= {"excluded", "live", "attenuated", "null"}
    for c in cells:
        if c.regime == "live":
            assert c.mcnemar_p < 0.05
        if c.regime == "excluded":
            assert c.validity_excluded
