# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of ``_fallback``: permutation max-stat and the exact
assignment search. Keep the search order identical to the fallback."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def flip_max(deltas, signs):
    cdef const cnp.int64_t[:, ::1] d = np.ascontiguousarray(deltas, dtype=np.int64)
    cdef const cnp.int64_t[:, ::1] s = np.ascontiguousarray(signs, dtype=np.int64)
    cdef Py_ssize_t n_cells = d.shape[0]
    cdef Py_ssize_t n_units = d.shape[1]
    cdef Py_ssize_t n_perm = s.shape[0]
    if n_cells == 0:
        raise ValueError("no cells to maximise over")
    if s.shape[1] != n_units:
        raise ValueError("signs and deltas disagree on the number of units")
    out = np.empty(n_perm, dtype=np.int64)
    cdef cnp.int64_t[::1] o = out
    cdef Py_ssize_t p, c, u
    cdef cnp.int64_t acc, top
    for p in range(n_perm):
        top = 0
        for c in range(n_cells):
            acc = 0
            for u in range(n_units):
                acc += s[p, u] * d[c, u]
            if c == 0 or acc > top:
                top = acc
        o[p] = top
    return out


cdef struct Search:
    Py_ssize_t n_t
    cnp.int64_t best


cdef void _search(Search* st, Py_ssize_t i, cnp.int64_t value,
                  const cnp.int64_t[::1] order,
                  const cnp.int64_t[:, ::1] opt_j,
                  const cnp.int64_t[:, ::1] opt_s,
                  const cnp.int64_t[::1] n_opt,
                  const cnp.int64_t[::1] bound,
                  cnp.int64_t[::1] remaining,
                  cnp.int64_t[::1] current,
                  cnp.int64_t[::1] best_assign) noexcept:
    cdef Py_ssize_t k, j, t
    if value + bound[i] <= st.best:
        return
    if i == st.n_t:
        st.best = value
        for k in range(st.n_t):
            best_assign[k] = current[k]
        return
    t = order[i]
    for k in range(n_opt[i]):
        j = opt_j[i, k]
        if remaining[j] > 0:
            remaining[j] -= 1
            current[t] = j
            _search(st, i + 1, value + opt_s[i, k], order, opt_j, opt_s, n_opt,
                    bound, remaining, current, best_assign)
            current[t] = -1
            remaining[j] += 1
    _search(st, i + 1, value, order, opt_j, opt_s, n_opt, bound, remaining,
            current, best_assign)


def bnb_assign(surplus, capacity):
    sur = np.ascontiguousarray(surplus, dtype=np.int64)
    cdef Py_ssize_t n_t = sur.shape[0]
    cdef Py_ssize_t n_b = sur.shape[1]
    best_pos = [max(0, int(sur[t].max())) if n_b else 0 for t in range(n_t)]
    order_list = sorted(range(n_t), key=lambda t: (-best_pos[t], t))

    opt_j_arr = np.full((n_t, max(n_b, 1)), -1, dtype=np.int64)
    opt_s_arr = np.zeros((n_t, max(n_b, 1)), dtype=np.int64)
    n_opt_arr = np.zeros(n_t, dtype=np.int64)
    for i, t in enumerate(order_list):
        row = sur[t]
        opts = [j for j in range(n_b) if row[j] > 0]
        opts.sort(key=lambda j: (-int(row[j]), j))
        n_opt_arr[i] = len(opts)
        for k, j in enumerate(opts):
            opt_j_arr[i, k] = j
            opt_s_arr[i, k] = row[j]
    bound_arr = np.zeros(n_t + 1, dtype=np.int64)
    for i in range(n_t - 1, -1, -1):
        bound_arr[i] = bound_arr[i + 1] + best_pos[order_list[i]]

    remaining_arr = np.ascontiguousarray(capacity, dtype=np.int64).copy()
    current_arr = np.full(n_t, -1, dtype=np.int64)
    best_arr = np.full(n_t, -1, dtype=np.int64)

    cdef Search st
    st.n_t = n_t
    st.best = 0
    _search(&st, 0, 0, np.asarray(order_list, dtype=np.int64), opt_j_arr,
            opt_s_arr, n_opt_arr, bound_arr, remaining_arr, current_arr, best_arr)
    return int(st.best), best_arr
