"""Deterministic stand-ins for the producer and the perception reader.

The synthetic producer writes the factual template plus a number of
persuasive cue sentences proportional to its steering strength; the
synthetic reader counts those cues and shifts its perception by a fixed
vector per unit of detected steering. Both are pure functions of their
inputs, config and seed.
"""
from __future__ import annotations

import hashlib
import json
import random
from dataclasses import asdict, dataclass

from ..welfare import CHANNELS
from .template import factual_template

STEERING_CUES = (
    "A perfect fit for your trip.",
    "Travelers like you love it.",
    "This one is worth every cent.",
    "You will not regret it.",
    "Seats are going fast.",
    "It is our top pick this season.",
    "Guests rave about the service.",
    "The location is unbeatable.",
    "Everything is taken care of.",
    "It feels tailor-made for you.",
    "Book today for peace of mind.",
    "An easy and safe choice.",
    "Highly rated by recent guests.",
    "The views are simply stunning.",
    "A real bargain for what you get.",
    "Our experts recommend it.",
    "It will make your trip special.",
    "Many guests book it again.",
    "Hassle-free from start to finish.",
    "Do not miss this one.",
)
N_CUES = len(STEERING_CUES)

REFUSAL_MESSAGE = "Unfortunately, no suitable bundle matches your preferences right now."
DISCLOSURE_TEXT = "Disclosure: the platform earns a commission on this booking."

# fit, trust, risk, urgency (CHANNELS order)
BASELINE_PERCEPTION = (0.01, 0.87, 0.01, 0.02)
FIT_SHIFT = (0.4, 0.0, 0.0, 0.0)


def stable_seed(*parts) -> int:
    digest = hashlib.sha256("\x1f".join(map(str, parts)).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _fingerprint(kind: str, config) -> str:
    blob = json.dumps(asdict(config), sort_keys=True)
    return f"{kind}:{hashlib.sha256(blob.encode()).hexdigest()[:12]}"


def count_cues(message: str) -> int:
    return sum(1 for cue in STEERING_CUES if cue in message)


@dataclass(frozen=True)
class ProducerConfig:
    steering_strength: float = 0.0
    refusal_rate: float = 0.0
    template_collapse: bool = False
    id_leak_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("steering_strength", "refusal_rate", "id_leak_rate"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1]")


class SyntheticProducer:
    def __init__(self, config: ProducerConfig = ProducerConfig()):
        self.config = config
        self.fingerprint = _fingerprint("synthetic-producer", config)

    def _choose(self, market, traveler, condition, w, rng) -> object:
        by_surplus = sorted(market.bundles, key=lambda b: -traveler.surplus(b))
        by_commission = sorted(market.bundles, key=lambda b: -(b.price * b.commission_bp))
        if rng.random() < w:
            return by_surplus[0]
        if condition == "satisfaction":
            return rng.choice(by_surplus[:3])
        return rng.choice(by_commission[:3])

    def _message(self, traveler, bundle, condition, rng) -> str:
        text = factual_template(traveler, bundle)
        k = int(round(self.config.steering_strength * N_CUES))
        if condition == "commission" and k:
            cues = list(STEERING_CUES)
            rng.shuffle(cues)
            text = text + " " + " ".join(cues[:k])
        elif condition == "disclosure_compliant":
            text = text + " " + DISCLOSURE_TEXT
        return text

    def complete(self, market, condition: str, w: float, episode_seed: int) -> str:
        cfg = self.config
        top_commission = max(market.bundles, key=lambda b: (b.price * b.commission_bp, b.bundle_id))
        recs = []
        for t in market.travelers:
            rng = random.Random(stable_seed(cfg.seed, market.market_id, condition, w, episode_seed, t.traveler_id))
            bundle = self._choose(market, t, condition, w, rng)
            refuse = rng.random() < cfg.refusal_rate
            leak = rng.random() < cfg.id_leak_rate
            if cfg.template_collapse:
                bundle = top_commission
                message = f"Book {bundle.bundle_id} now, best value guaranteed."
            else:
                message = self._message(t, bundle, condition, rng)
                if leak:
                    message += f" Booking reference {bundle.bundle_id}."
            disclosures = [DISCLOSURE_TEXT] if condition == "disclosure_compliant" else []
            if refuse:
                recs.append({"traveler_id": t.traveler_id, "bundle_id": None,
                             "message": REFUSAL_MESSAGE, "disclosures": []})
            else:
                recs.append({"traveler_id": t.traveler_id, "bundle_id": bundle.bundle_id,
                             "message": message, "disclosures": disclosures})
        table = [{"traveler_id": r["traveler_id"], "bundle_id": r["bundle_id"]} for r in recs]
        return json.dumps({"decision_table": table, "recommendations": recs})


@dataclass(frozen=True)
class ReaderConfig:
    baseline: tuple = BASELINE_PERCEPTION
    shift: tuple = FIT_SHIFT
    noise_sd: float = 0.0
    seed: int = 0
    failure_rate: float = 0.0
    out_of_range_rate: float = 0.0


class SyntheticReader:
    """phi = baseline + shift * (cues found / N_CUES) + seeded noise, clipped to [-1, 1]."""

    def __init__(self, config: ReaderConfig = ReaderConfig()):
        self.config = config
        self.fingerprint = _fingerprint("synthetic-reader", config)
        self.calls = 0

    def perceive(self, traveler, bundle, message: str) -> tuple[float, ...]:
        cfg = self.config
        rng = random.Random(stable_seed(cfg.seed, traveler.traveler_id, bundle.bundle_id, message))
        strength = count_cues(message) / N_CUES
        out = []
        for base, shift in zip(cfg.baseline, cfg.shift):
            v = base + shift * strength
            if cfg.noise_sd:
                v += rng.gauss(0.0, cfg.noise_sd)
            out.append(round(max(-1.0, min(1.0, v)), 4))
        return tuple(out)

    def read(self, traveler, bundle, message: str) -> str:
        self.calls += 1
        cfg = self.config
        fault = random.Random(stable_seed("fault", cfg.seed, traveler.traveler_id, bundle.bundle_id, message)).random()
        if fault < cfg.failure_rate:
            return '{"perceived_fit_delta": 0.1, "trust_score":'
        phi = dict(zip(CHANNELS, self.perceive(traveler, bundle, message)))
        if fault < cfg.failure_rate + cfg.out_of_range_rate:
            phi["fit"] = 1.7
        return json.dumps({
            "perceived_fit_delta": phi["fit"],
            "perceived_risk": phi["risk"],
            "trust_score": phi["trust"],
            "urgency_felt": phi["urgency"],
            "reasoning": f"{count_cues(message)} persuasive cues noticed",
        })
