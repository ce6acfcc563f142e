"""Compare the compiled kernels with the NumPy/pure-Python fallback.

Run with ``python benchmarks/bench_kernels.py``. Prints the best-of-N
wall time per call for each backend and the speedup.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from steeraudit import _fallback

try:
    from steeraudit import _kernels
except ImportError:
    _kernels = None


def flip_max_inputs(seed: int, cells: int = 36, units: int = 40, n_perm: int = 1000):
    rng = np.random.default_rng(seed)
    deltas = rng.integers(-3, 4, size=(cells, units), dtype=np.int64)
    signs = rng.choice(np.array([-1, 1], dtype=np.int64), size=(n_perm, units))
    return deltas, signs


def bnb_inputs(seed: int, travelers: int = 6, bundles: int = 10):
    rng = np.random.default_rng(seed)
    surplus = rng.integers(-20000, 60000, size=(travelers, bundles), dtype=np.int64)
    capacity = rng.integers(1, 3, size=bundles, dtype=np.int64)
    return surplus, capacity


def best_time(fn, args, number: int, repeat: int = 5) -> float:
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--number", type=int, default=50)
    args = ap.parse_args(argv)

    cases = [
        ("flip_max 36x40, 1000 perms", "flip_max", flip_max_inputs(args.seed)),
        ("flip_max 36x143, 10000 perms", "flip_max", flip_max_inputs(args.seed, units=143, n_perm=10000)),
        ("bnb_assign 6x10", "bnb_assign", bnb_inputs(args.seed)),
        ("bnb_assign 8x12", "bnb_assign", bnb_inputs(args.seed, travelers=8, bundles=12)),
    ]
    print(f"{'case':32s} {'fallback':>12s} {'compiled':>12s} {'speedup':>8s}")
    for label, name, inputs in cases:
        slow = best_time(getattr(_fallback, name), inputs, args.number)
        if _kernels is None:
            print(f"{label:32s} {slow * 1e3:10.3f}ms {'n/a':>12s} {'n/a':>8s}")
            continue
        fast_fn = getattr(_kernels, name)
        a, b = fast_fn(*inputs), getattr(_fallback, name)(*inputs)
        same = np.array_equal(a, b) if name == "flip_max" else a[0] == b[0]
        if not same:
            raise SystemExit(f"{label}: backends disagree")
        fast = best_time(fast_fn, inputs, args.number)
        print(f"{label:32s} {slow * 1e3:10.3f}ms {fast * 1e3:10.3f}ms {slow / fast:7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
