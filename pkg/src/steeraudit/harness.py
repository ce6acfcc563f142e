"""Synthetic populations for power, calibration and fixture tests."""
from __future__ import annotations

import itertools
import random
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .audit import candidate_stimuli, capture, replay
from .gates import detect_id_leak, classify_refusal
from .market import generate_small_market
from .pairing import DIAGNOSTIC_WINDOW, EpisodeRecord, PairedStimulus, assign_clusters, in_window, pair_up
from .providers.msgcap import Msgcap, Recommendation
from .providers.synthetic import ProducerConfig, ReaderConfig, SyntheticProducer, SyntheticReader
from .welfare import DEPLOYED_COEFFICIENTS, PerceptionVector, perception_score


def simulate_audit_pairs(seed: int, n_pairs: int = 300, steering: float = 0.6, noise_sd: float = 0.02,
                         window=DIAGNOSTIC_WINDOW, mode: str = "tuple3", max_markets: int = 2000) -> list[PairedStimulus]:
    """Run the synthetic producer/reader pipeline until ``n_pairs`` pairs exist.

    Markets are generated from a seed stream derived from ``seed``; whole
    scenarios are added until enough in-window pairs are collected, then
    the list is cut at ``n_pairs``.
    """
    producer = SyntheticProducer(ProducerConfig(steering_strength=steering, seed=seed))
    reader = SyntheticReader(ReaderConfig(noise_sd=noise_sd, seed=seed))
    pairs: list[PairedStimulus] = []
    rng = random.Random(seed)
    for k in range(max_markets):
        regime = ("loose", "tight")[k % 2]
        market = generate_small_market(rng.randrange(2**32), regime)
        market.market_id = f"{regime}-{seed}-{k}"
        stimuli = [s for s in candidate_stimuli(capture([market], producer), {market.market_id: market})
                   if in_window(s, window)]
        if not stimuli:
            continue
        rep = replay(stimuli, {market.market_id: market}, reader)
        pairs.extend(pair_up(rep.records, mode).pairs)
        if len(pairs) >= n_pairs:
            return assign_clusters(pairs[:n_pairs])
    raise RuntimeError(f"only {len(pairs)} pairs after {max_markets} markets")


def _record(sid, tid, bid, variant, phi, surplus, budget, tau, w=0.5, seed=0, regime="loose") -> EpisodeRecord:
    return EpisodeRecord(sid, w, seed, tid, bid, variant, f"{variant} message", phi, surplus, budget, tau, regime)


def _make_pair(sid, j, phi_o, phi_f, surplus, budget, tau, w=0.5, regime="loose") -> PairedStimulus:
    o = _record(sid, f"t{j}", f"b{j}", "original", phi_o, surplus, budget, tau, w, regime=regime)
    f = _record(sid, f"t{j}", f"b{j}", "factual", phi_f, surplus, budget, tau, w, regime=regime)
    return PairedStimulus(o.key3, o, f, sid)


def _random_phi(rng: np.random.Generator, scale: float = 1.0, center=(0.0, 0.0, 0.0, 0.0)) -> PerceptionVector:
    v = np.clip(np.asarray(center) + rng.uniform(-scale, scale, 4), -1, 1)
    return PerceptionVector(*(round(float(x), 4) for x in v))


def random_pairs(seed: int, n: int = 1000, n_clusters: int = 40) -> list[PairedStimulus]:
    """Arbitrary perceptions around the threshold; no planted structure."""
    rng = np.random.default_rng(seed)
    out = []
    for j in range(n):
        budget = int(rng.integers(50_000, 300_000))
        tau = round(float(rng.uniform(0.02, 0.16)), 4)
        surplus = int(round(budget * (tau + rng.uniform(-0.15, 0.08))))
        out.append(_make_pair(f"s{j % n_clusters}", j, _random_phi(rng), _random_phi(rng), surplus, budget, tau,
                              w=(0.25, 0.5, 0.75)[j % 3], regime=("loose", "tight")[j % 2]))
    return out


def exchangeable_null_pairs(seed: int, n_clusters: int = 30, per_cluster: int = 5) -> list[PairedStimulus]:
    """Pairs whose two variants are exchangeable within each cluster.

    Each cluster has its own perception centre and near-threshold gap (a
    shared effect on both variants); the two variants of a pair are iid
    draws around that centre, so any label swap leaves the joint law intact.
    """
    rng = np.random.default_rng(seed)
    out = []
    j = 0
    for k in range(n_clusters):
        center = rng.uniform(-0.4, 0.4, 4)
        for _ in range(per_cluster):
            budget = 100_000
            tau = 0.08
            surplus = int(round(budget * (tau - rng.uniform(-0.02, 0.04))))
            out.append(_make_pair(f"s{k}", j, _random_phi(rng, 0.6, center), _random_phi(rng, 0.6, center),
                                  surplus, budget, tau))
            j += 1
    return out


def bounded_phi_pairs(seed: int, n: int = 409, max_abs_score: float = 0.048, c=DEPLOYED_COEFFICIENTS) -> list[PairedStimulus]:
    """Perceptions rescaled so ``max |c . phi|`` over all 2n vectors is exactly ``max_abs_score``."""
    rng = np.random.default_rng(seed)
    coeff = np.array(c.components(), dtype=float)
    phis = []
    for _ in range(2 * n):
        v = rng.uniform(-1, 1, 4)
        s = abs(float(coeff @ v))
        if s > max_abs_score:
            v = v * (max_abs_score / s) * 0.999
        phis.append(PerceptionVector(*(round(float(x), 4) for x in v)))
    # pin one vector to the bound: phi = bound / sum|c| * sign(c)
    scale = Fraction(repr(max_abs_score)) / sum(abs(x) for x in c.exact)
    phis[0] = PerceptionVector(*(float(scale) * (1 if x >= 0 else -1) for x in c.components()))
    out = []
    for j in range(n):
        budget = 150_000
        tau = 0.08
        surplus = int(round(budget * (tau + rng.uniform(-0.10, 0.05))))
        out.append(_make_pair(f"s{j % 88}", j, phis[2 * j], phis[2 * j + 1], surplus, budget, tau))
    return out


def planted_channel_pairs(seed: int, channel: str = "fit", n: int = 400, shift: float = 0.5) -> list[PairedStimulus]:
    """Original perceptions differ from factual only in one channel."""
    from .welfare import CHANNELS
    rng = np.random.default_rng(seed)
    k = CHANNELS.index(channel)
    out = []
    for j in range(n):
        base = rng.uniform(-0.3, 0.3, 4)
        orig = base.copy()
        orig[k] = np.clip(orig[k] + shift, -1, 1)
        budget = 100_000
        tau = 0.08
        surplus = int(round(budget * (tau + rng.uniform(-0.10, 0.05))))
        out.append(_make_pair(f"s{j % 50}", j, PerceptionVector(*(round(float(x), 4) for x in orig)),
                              PerceptionVector(*(round(float(x), 4) for x in base)), surplus, budget, tau))
    return out


def pairs_with_counts(b: int, c: int, n11: int, n00: int, n_clusters: int = 10) -> list[PairedStimulus]:
    """Pairs whose deployed-point decisions have exactly the given 2x2 cells.

    Budget 1000.00, tau 0.08. Discordant pairs sit 2% below the threshold and
    are tipped by a full-fit message (score 0.03); concordant pairs sit well
    above or below it with zero perception.
    """
    lift, flat = PerceptionVector(1.0, 0, 0, 0), PerceptionVector.zero()
    budget, tau = 100_000, 0.08
    rows = ([(6_000, lift, flat)] * b + [(6_000, flat, lift)] * c
            + [(9_000, flat, flat)] * n11 + [(0, flat, flat)] * n00)
    return assign_clusters([
        _make_pair(f"s{j % n_clusters}", j, o, f, surplus, budget, tau, w=(0.25, 0.5, 0.75)[j % 3],
                   regime=("loose", "tight")[j % 2])
        for j, (surplus, o, f) in enumerate(rows)
    ])


# -- gate fixtures ----------------------------------------------------------

@dataclass(frozen=True)
class GateTarget:
    json_pct: float
    cov_pct: float
    wc: float
    ref_pct: float
    uq_pct: float
    lk_pct: float


def _hits(k: int, n: int, pct: float) -> bool:
    """Does k/n print as ``pct`` with one decimal?"""
    return n > 0 and round(k * 1000 / n) / 10 == pct


def _tag(i: int) -> str:
    letters = ""
    i += 1
    while i:
        i, r = divmod(i - 1, 26)
        letters = chr(97 + r) + letters
    return "v" + letters


def _pad(words: list[str], length: int) -> str:
    if len(words) > length:
        raise ValueError("message longer than its target length")
    return " ".join(words + ["nice"] * (length - len(words)))


def _leak_split(d: int, n_succ: int, leaks: int):
    """Groups for the leaking and the clean success messages, or None."""
    if leaks == 0 or leaks == n_succ:
        return (d, 0) if leaks else (0, d)
    k = max(1, d - (n_succ - leaks))
    if d < 2 or k > min(leaks, d - 1):
        return None
    return k, d - k


def _counts_for(target: GateTarget, max_calls: int = 600):
    for n_calls in range(1, max_calls + 1):
        for n_valid in range(n_calls, 0, -1):
            if not _hits(n_valid, n_calls, target.json_pct):
                continue
            if target.wc != int(target.wc) and n_valid % 2:
                continue  # a .5 median needs an even message count
            for n_ref in range(n_valid + 1):
                if not _hits(n_ref, n_valid, target.ref_pct):
                    continue
                n_succ = n_valid - n_ref
                cov = next((k for k in range(n_succ + 1) if _hits(k, n_succ, target.cov_pct)), None)
                uq = next((k for k in range(1, n_succ + 1) if _hits(k, n_succ, target.uq_pct)), None)
                lk = next((k for k in range(n_valid + 1) if _hits(k, n_valid, target.lk_pct)), None)
                if None in (cov, uq, lk):
                    continue
                for ref_leaks in range(0, min(n_ref, lk) + 1):
                    split = _leak_split(uq, n_succ, lk - ref_leaks) if lk - ref_leaks <= n_succ else None
                    if split is not None:
                        return n_calls, n_valid, n_ref, cov, uq, lk - ref_leaks, ref_leaks, split
    raise ValueError(f"no integer counts reproduce {target}")


def _groups(total: int, k: int) -> list[int]:
    return [] if k == 0 else [1] * (k - 1) + [total - (k - 1)]


def gate_fixture_msgcap(target: GateTarget, bundle_ids=("b1", "b2", "b3"), scenario_id: str = "fixture") -> Msgcap:
    """Build a msgcap whose gate statistics round to ``target``."""
    n_calls, n_valid, n_ref, cov, uq, succ_leaks, ref_leaks, (k_leak, k_clean) = _counts_for(target)
    n_succ = n_valid - n_ref
    lo = int(target.wc)
    hi = lo if target.wc == lo else lo + 1

    # units: (size, kind, leak); lengths assigned so the median hits the target
    units = [(size, "group", True) for size in _groups(succ_leaks, k_leak)]
    units += [(size, "group", False) for size in _groups(n_succ - succ_leaks, k_clean)]
    units += [(1, "refusal", i < ref_leaks) for i in range(n_ref)]
    lengths = [hi] * len(units)
    if lo != hi:
        half = n_valid // 2
        if n_valid % 2:
            raise ValueError("a .5 median needs an even number of messages")
        # subset of units summing to exactly half the messages gets the lower length
        reach = {0: []}
        for idx, (size, _, _) in enumerate(units):
            for total, chosen in list(reach.items()):
                if total + size <= half and total + size not in reach:
                    reach[total + size] = chosen + [idx]
        if half not in reach:
            raise ValueError("cannot split messages around a .5 median")
        for idx in reach[half]:
            lengths[idx] = lo

    records = []
    covered_left = cov
    tid = itertools.count(1)

    def success(msg):
        nonlocal covered_left
        bid = bundle_ids[0] if covered_left > 0 else "x-missing"
        covered_left -= 1
        records.append(Recommendation(f"t{next(tid)}", True, bid, msg))

    for u, ((size, kind, leak), length) in enumerate(zip(units, lengths)):
        words = ["Unfortunately" if kind == "refusal" else "Enjoy", _tag(u)]
        if leak:
            words.append(bundle_ids[0])
        msg = _pad(words, length)
        if kind == "refusal":
            records.append(Recommendation(f"t{next(tid)}", False, None, msg))
        else:
            for _ in range(size):
                success(msg)
    for _ in range(n_calls - n_valid):
        records.append(Recommendation(f"t{next(tid)}", False, None, "", [], raw_payload_valid=False))
    assert all(classify_refusal(r.message) == r.message.startswith("Unfortunately") for r in records)
    assert sum(detect_id_leak(r.message) for r in records) == succ_leaks + ref_leaks
    return Msgcap(scenario_id, "commission", 0.5, 0, records, producer="gate-fixture")


# Published gate profiles (percentages, word-count median) and their verdicts.
REFERENCE_GATE_ROWS = {
    "over-hedging": (GateTarget(100.0, 91.3, 23, 55.9, 74.1, 0.0), "FAIL: ref"),
    "template-collapse-a": (GateTarget(100.0, 91.7, 6, 8.0, 4.0, 84.6), "FAIL: wc/uq/lk"),
    "template-collapse-b": (GateTarget(99.3, 91.3, 6, 8.5, 12.5, 80.9), "FAIL: wc/uq/lk"),
    "verbose-probe": (GateTarget(100.0, 87.0, 21, 13.0, 97.9, 3.7), "PASS"),
    "probe-batch-32": (GateTarget(100.0, 88.9, 22.5, 13.0, 97.9, 3.7), "PASS"),
    "probe-batch-128": (GateTarget(100.0, 88.9, 23, 13.0, 97.9, 0.0), "PASS"),
}
