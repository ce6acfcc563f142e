"""Seeded small travel markets and the exact welfare ceiling.

Money is integer cents everywhere. ``generate_small_market(seed, regime)``
draws every random quantity from one ``random.Random(seed)`` stream, so the
loose and tight markets for a seed share their draws and differ only in
dispersion and threshold level.
"""
from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .kernels import bnb_assign

REGIMES = ("loose", "tight")

BUDGET_CENTER = 150_000
HOTEL_COST_CENTER = 80_000
AIRLINE_COST_CENTER = 45_000
# relative half-width of budget/price draws; tight halves it
DISPERSION = {"loose": 0.5, "tight": 0.25}
# traveler acceptance threshold tau ~ U(lo, hi)
TAU_RANGE = {"loose": (0.02, 0.12), "tight": (0.06, 0.16)}
COMMISSION_BP = (500, 800, 1000, 1200, 1500, 2000)
SURPLUS_SPAN = 0.2
AFFINITY_WEIGHT = 0.5
PRICE_WEIGHT = 0.8
NOISE_SD = 0.25

HOTEL_KINDS = ("beach", "city", "mountain", "resort")
EXTRAS = {
    "breakfast": 2_500,
    "airport transfer": 3_000,
    "spa access": 5_500,
    "city tour": 4_000,
    "lounge access": 3_500,
    "travel insurance": 2_000,
}
HOTEL_NAMES = {
    "beach": ("Seaside Getaway", "Coral Bay Retreat", "Driftwood Shores", "Sunset Cove"),
    "city": ("Harbor Lights Inn", "Old Town Suites", "Riverside Plaza", "Lantern Street Hotel"),
    "mountain": ("Pine Ridge Lodge", "Summit View Chalet", "Cedar Hollow Inn", "Glacier Gate Lodge"),
    "resort": ("Palm Grove Resort", "Lagoon Paradise", "Orchid Springs Resort", "Azure Sands"),
}
AIRLINE_NAMES = ("Bluejay Air", "Northwind Airways", "Skylark Airlines", "Meridian Air", "Cirrus Jet")
AIRLINE_TIERS = {1: "economy", 2: "standard", 3: "premium"}

# archetype -> (kind preference, stars weight, tier weight, extras preference)
ARCHETYPES = {
    "beach lover": (
        {"beach": 0.8, "resort": 0.5, "city": -0.4, "mountain": -0.6},
        0.2, 0.0, {"breakfast": 0.2, "spa access": 0.3, "airport transfer": 0.1},
    ),
    "culture seeker": (
        {"city": 0.8, "mountain": 0.1, "beach": -0.3, "resort": -0.4},
        0.1, 0.1, {"city tour": 0.5, "breakfast": 0.2},
    ),
    "adventurer": (
        {"mountain": 0.8, "beach": 0.2, "city": -0.2, "resort": -0.5},
        -0.1, -0.1, {"travel insurance": 0.4, "airport transfer": 0.1},
    ),
    "luxury": (
        {"resort": 0.7, "beach": 0.3, "city": 0.2, "mountain": -0.1},
        0.6, 0.4, {"spa access": 0.5, "lounge access": 0.4},
    ),
    "budget": (
        {"city": 0.2, "beach": 0.1, "mountain": 0.1, "resort": -0.4},
        -0.4, -0.3, {"breakfast": 0.4},
    ),
}


class AllocationError(ValueError):
    """An allocation references unknown ids or exceeds a capacity."""


@dataclass
class Hotel:
    hotel_id: str
    name: str
    kind: str
    stars: int
    base_cost: int


@dataclass
class Airline:
    airline_id: str
    name: str
    tier: int
    base_fare: int


@dataclass
class Bundle:
    bundle_id: str
    name: str
    hotel_id: str
    airline_id: str
    hotel_cost: int
    airline_cost: int
    extras_cost: int
    price: int
    commission_bp: int
    extras: list[str]
    capacity: int

    @property
    def commission_rate(self) -> Fraction:
        return Fraction(self.commission_bp, 10_000)


@dataclass
class Traveler:
    traveler_id: str
    name: str
    budget: int
    tau: float
    archetype: str
    preference: dict[str, float]
    utility_table: dict[str, int]

    def surplus(self, bundle: Bundle) -> int:
        return self.utility_table[bundle.bundle_id] - bundle.price


@dataclass
class Market:
    market_id: str
    regime: str
    seed: int
    hotels: list[Hotel] = field(default_factory=list)
    airlines: list[Airline] = field(default_factory=list)
    travelers: list[Traveler] = field(default_factory=list)
    bundles: list[Bundle] = field(default_factory=list)

    def bundle(self, bundle_id: str) -> Bundle:
        for b in self.bundles:
            if b.bundle_id == bundle_id:
                return b
        raise KeyError(bundle_id)

    def traveler(self, traveler_id: str) -> Traveler:
        for t in self.travelers:
            if t.traveler_id == traveler_id:
                return t
        raise KeyError(traveler_id)

    def validate(self) -> None:
        if not 3 <= len(self.hotels) <= 5:
            raise ValueError("market must have 3-5 hotels")
        if not 2 <= len(self.airlines) <= 3:
            raise ValueError("market must have 2-3 airlines")
        if not 3 <= len(self.travelers) <= 6:
            raise ValueError("market must have 3-6 travelers")
        if not 6 <= len(self.bundles) <= 10:
            raise ValueError("market must have 6-10 bundles")
        ids = [h.hotel_id for h in self.hotels] + [a.airline_id for a in self.airlines]
        ids += [t.traveler_id for t in self.travelers] + [b.bundle_id for b in self.bundles]
        if len(ids) != len(set(ids)):
            raise ValueError("identifiers must be unique within a market")
        hotel_ids = {h.hotel_id for h in self.hotels}
        airline_ids = {a.airline_id for a in self.airlines}
        for b in self.bundles:
            if b.hotel_id not in hotel_ids or b.airline_id not in airline_ids:
                raise ValueError(f"bundle {b.bundle_id} references a missing hotel or airline")
            if b.hotel_cost + b.airline_cost + b.extras_cost != b.price:
                raise ValueError(f"bundle {b.bundle_id} price does not decompose")
            if not 0 <= b.commission_bp <= 10_000 or b.capacity < 1 or b.price <= 0:
                raise ValueError(f"bundle {b.bundle_id} has invalid rate, capacity or price")
        for t in self.travelers:
            if t.budget <= 0 or not 0 < t.tau < 1:
                raise ValueError(f"traveler {t.traveler_id} has invalid budget or threshold")
            if set(t.utility_table) != {b.bundle_id for b in self.bundles}:
                raise ValueError(f"traveler {t.traveler_id} utility table must cover every bundle")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "Market":
        return cls(
            market_id=d["market_id"],
            regime=d["regime"],
            seed=d["seed"],
            hotels=[Hotel(**h) for h in d["hotels"]],
            airlines=[Airline(**a) for a in d["airlines"]],
            travelers=[Traveler(**t) for t in d["travelers"]],
            bundles=[Bundle(**b) for b in d["bundles"]],
        )

    @classmethod
    def load(cls, path) -> "Market":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, directory) -> Path:
        path = Path(directory) / market_filename(self.regime, self.seed)
        path.write_text(self.to_json(), encoding="utf-8")
        return path


def market_filename(regime: str, seed: int) -> str:
    return f"market_{regime}_{seed}.json"


def _spread(rng: random.Random, center: int, half_width: float) -> int:
    return int(round(center * (1 + half_width * rng.uniform(-1, 1))))


def _affinity(archetype: str, hotel: Hotel, airline: Airline, extras: list[str]) -> float:
    kind_pref, stars_w, tier_w, extras_pref = ARCHETYPES[archetype]
    score = kind_pref.get(hotel.kind, 0.0)
    score += stars_w * (hotel.stars - 3.5) / 1.5
    score += tier_w * (airline.tier - 2)
    score += sum(extras_pref.get(e, 0.0) for e in extras) * 0.5
    return max(-1.0, min(1.0, score))


def generate_small_market(seed: int, regime: str = "loose") -> Market:
    if regime not in REGIMES:
        raise ValueError(f"regime must be one of {REGIMES}, got {regime!r}")
    rng = random.Random(seed)
    spread = DISPERSION[regime]

    n_hotels = rng.randint(3, 5)
    n_airlines = rng.randint(2, 3)
    n_travelers = rng.randint(3, 6)

    kinds = [rng.choice(HOTEL_KINDS) for _ in range(n_hotels)]
    hotels = []
    used_names: set[str] = set()
    for i, kind in enumerate(kinds, start=1):
        free = [n for n in HOTEL_NAMES[kind] if n not in used_names]
        if not free:
            # every name of this kind is taken; switch to a kind with names left
            kind = rng.choice([k for k in HOTEL_KINDS if any(n not in used_names for n in HOTEL_NAMES[k])])
            free = [n for n in HOTEL_NAMES[kind] if n not in used_names]
        name = rng.choice(free)
        used_names.add(name)
        hotels.append(Hotel(f"h{i}", name, kind, rng.randint(2, 5), _spread(rng, HOTEL_COST_CENTER, spread)))
    airline_names = rng.sample(AIRLINE_NAMES, n_airlines)
    airlines = [
        Airline(f"a{i}", name, rng.randint(1, 3), _spread(rng, AIRLINE_COST_CENTER, spread))
        for i, name in enumerate(airline_names, start=1)
    ]

    combos = [(h, a) for h in range(n_hotels) for a in range(n_airlines)]
    n_bundles = rng.randint(6, min(10, len(combos)))
    chosen = sorted(rng.sample(combos, n_bundles))
    extra_names = list(EXTRAS)
    bundles = []
    for j, (hi, ai) in enumerate(chosen, start=1):
        hotel, airline = hotels[hi], airlines[ai]
        extras = sorted(rng.sample(extra_names, rng.randint(0, 3)), key=extra_names.index)
        extras_cost = sum(EXTRAS[e] for e in extras)
        bundles.append(Bundle(
            bundle_id=f"b{j}",
            name=f"{hotel.name} with {airline.name}",
            hotel_id=hotel.hotel_id,
            airline_id=airline.airline_id,
            hotel_cost=hotel.base_cost,
            airline_cost=airline.base_fare,
            extras_cost=extras_cost,
            price=hotel.base_cost + airline.base_fare + extras_cost,
            commission_bp=rng.choice(COMMISSION_BP),
            extras=extras,
            capacity=rng.randint(1, 3),
        ))

    tau_lo, tau_hi = TAU_RANGE[regime]
    travelers = []
    for i in range(1, n_travelers + 1):
        budget = _spread(rng, BUDGET_CENTER, spread)
        # one uniform draw, mapped into the regime's tau interval
        tau = round(tau_lo + (tau_hi - tau_lo) * rng.random(), 3)
        archetype = rng.choice(sorted(ARCHETYPES))
        utility = {}
        for b in bundles:
            hotel = hotels[int(b.hotel_id[1:]) - 1]
            airline = airlines[int(b.airline_id[1:]) - 1]
            z = (AFFINITY_WEIGHT * _affinity(archetype, hotel, airline, b.extras)
                 - PRICE_WEIGHT * (b.price / budget - 1)
                 + rng.gauss(0.0, NOISE_SD))
            z = max(-1.0, min(1.0, z))
            utility[b.bundle_id] = b.price + int(round(SURPLUS_SPAN * budget * z))
        kind_pref, stars_w, tier_w, extras_pref = ARCHETYPES[archetype]
        preference = {f"kind:{k}": v for k, v in sorted(kind_pref.items())}
        preference.update({"stars": stars_w, "airline_tier": tier_w})
        preference.update({f"extra:{k}": v for k, v in sorted(extras_pref.items())})
        travelers.append(Traveler(f"t{i}", f"Traveler {chr(64 + i)}", budget, tau, archetype, preference, utility))

    market = Market(f"{regime}-{seed}", regime, seed, hotels, airlines, travelers, bundles)
    market.validate()
    return market


Allocation = dict  # traveler_id -> bundle_id | None


def validate_allocation(market: Market, allocation: Allocation) -> None:
    traveler_ids = {t.traveler_id for t in market.travelers}
    capacity = {b.bundle_id: b.capacity for b in market.bundles}
    used: dict[str, int] = {}
    for tid, bid in allocation.items():
        if tid not in traveler_ids:
            raise AllocationError(f"unknown traveler {tid!r}")
        if bid is None:
            continue
        if bid not in capacity:
            raise AllocationError(f"unknown bundle {bid!r}")
        used[bid] = used.get(bid, 0) + 1
        if used[bid] > capacity[bid]:
            raise AllocationError(f"bundle {bid} over capacity ({capacity[bid]})")


def traveler_surplus(market: Market, allocation: Allocation) -> int:
    validate_allocation(market, allocation)
    return sum(
        market.traveler(tid).surplus(market.bundle(bid))
        for tid, bid in allocation.items() if bid is not None
    )


def platform_revenue(market: Market, allocation: Allocation) -> Fraction:
    """Commission revenue in cents, exact (rates are basis points)."""
    validate_allocation(market, allocation)
    total = 0
    for bid in allocation.values():
        if bid is not None:
            b = market.bundle(bid)
            total += b.price * b.commission_bp
    return Fraction(total, 10_000)


def surplus_matrix(market: Market) -> np.ndarray:
    return np.array(
        [[t.surplus(b) for b in market.bundles] for t in market.travelers], dtype=np.int64
    ).reshape(len(market.travelers), len(market.bundles))


def oracle_welfare_ceiling(market: Market) -> tuple[int, Allocation]:
    """Maximum traveler surplus over capacity-feasible allocations (exact)."""
    capacity = np.array([b.capacity for b in market.bundles], dtype=np.int64)
    best, assign = bnb_assign(surplus_matrix(market), capacity)
    allocation = {
        t.traveler_id: (market.bundles[j].bundle_id if j >= 0 else None)
        for t, j in zip(market.travelers, assign.tolist())
    }
    return int(best), allocation


def brute_force_ceiling(market: Market) -> int:
    """Exhaustive enumeration over every assignment; a test oracle only.

    Enumerates all (|B|+1)^|T| assignments with NumPy, discarding those that
    exceed a capacity. Independent of the branch-and-bound search.
    """
    n_t, n_b = len(market.travelers), len(market.bundles)
    sur = surplus_matrix(market)
    # column n_b is the "unassigned" option, worth 0
    padded = np.concatenate([sur, np.zeros((n_t, 1), dtype=np.int64)], axis=1)
    if n_t == 0:
        return 0
    flat = np.arange((n_b + 1) ** n_t, dtype=np.int64)
    grids = np.stack(np.unravel_index(flat, (n_b + 1,) * n_t), axis=1)
    values = padded[np.arange(n_t)[None, :], grids].sum(axis=1)
    feasible = np.ones(len(grids), dtype=bool)
    for j, b in enumerate(market.bundles):
        feasible &= (grids == j).sum(axis=1) <= b.capacity
    return int(values[feasible].max())
