"""Pure-Python/NumPy implementations of the hot kernels.

These mirror ``_kernels.pyx`` exactly (same search order, same tie
handling) so that both backends return identical results.
"""
from __future__ import annotations

import numpy as np


def flip_max(deltas: np.ndarray, signs: np.ndarray) -> np.ndarray:
    """Max over rows of ``deltas`` of the sign-weighted unit sums.

    ``deltas`` is (cells, units) int64 holding per-unit sums of
    ``acc_orig - acc_fact``; ``signs`` is (n_perm, units) with entries +1/-1.
    Returns int64 (n_perm,) numerators of the max paired RD.
    """
    deltas = np.asarray(deltas, dtype=np.int64)
    signs = np.asarray(signs, dtype=np.int64)
    if deltas.shape[0] == 0:
        raise ValueError("no cells to maximise over")
    return (signs @ deltas.T).max(axis=1)


def bnb_assign(surplus: np.ndarray, capacity: np.ndarray) -> tuple[int, np.ndarray]:
    """Exact max-surplus capacitated assignment by depth-first branch and bound.

    ``surplus[t, j]`` is the integer surplus of giving bundle ``j`` to
    traveler ``t``; leaving a traveler unassigned is worth 0. Returns the
    optimum and one maximising assignment (-1 = unassigned).
    """
    surplus = np.asarray(surplus, dtype=np.int64)
    n_t, n_b = surplus.shape
    remaining = [int(c) for c in np.asarray(capacity, dtype=np.int64)]

    best_pos = [max(0, int(surplus[t].max())) if n_b else 0 for t in range(n_t)]
    order = sorted(range(n_t), key=lambda t: (-best_pos[t], t))
    options = []
    for t in order:
        row = surplus[t]
        opts = [j for j in range(n_b) if row[j] > 0]
        opts.sort(key=lambda j: (-int(row[j]), j))
        options.append([(j, int(row[j])) for j in opts])
    bound = [0] * (n_t + 1)
    for i in range(n_t - 1, -1, -1):
        bound[i] = bound[i + 1] + best_pos[order[i]]

    best = 0
    best_assign = [-1] * n_t
    current = [-1] * n_t

    def search(i: int, value: int) -> None:
        nonlocal best, best_assign
        if value + bound[i] <= best:
            return
        if i == n_t:
            best = value
            best_assign = current.copy()
            return
        t = order[i]
        for j, s in options[i]:
            if remaining[j] > 0:
                remaining[j] -= 1
                current[t] = j
                search(i + 1, value + s)
                current[t] = -1
                remaining[j] += 1
        search(i + 1, value)

    search(0, 0)
    return best, np.asarray(best_assign, dtype=np.int64)
