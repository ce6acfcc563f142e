import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from steeraudit import _fallback, kernels

from .conftest import COMPILED


def _brute_assign(surplus, capacity):
    import itertools
    n_t, n_b = surplus.shape
    best = 0
    for combo in itertools.product(range(-1, n_b), repeat=n_t):
        used = np.zeros(n_b, dtype=int)
        value = 0
        for t, j in enumerate(combo):
            if j >= 0:
                used[j] += 1
                value += surplus[t, j]
        if (used <= capacity).all():
            best = max(best, value)
    return best


def test_backend_is_reported():
    assert kernels.BACKEND in ("cython", "python")


def test_flip_max_matches_definition(backend):
    deltas = np.array([[1, -2, 3], [0, 4, -1]], dtype=np.int64)
    signs = np.array([[1, 1, 1], [-1, 1, -1], [1, -1, 1]], dtype=np.int8)
    out = np.asarray(backend.flip_max(deltas, signs))
    assert out.tolist() == [3, 5, 6]


def test_flip_max_rejects_empty_grid(backend):
    with pytest.raises(ValueError):
        backend.flip_max(np.zeros((0, 3), dtype=np.int64), np.ones((2, 3), dtype=np.int8))


def test_bnb_small_case(backend):
    surplus = np.array([[5, 3], [4, -1], [2, 2]], dtype=np.int64)
    best, assign = backend.bnb_assign(surplus, np.array([1, 1], dtype=np.int64))
    assert best == 7  # t0->b1 (3) + t1->b0 (4)
    total = sum(surplus[t, j] for t, j in enumerate(assign.tolist()) if j >= 0)
    assert total == best


def test_bnb_all_negative_leaves_everyone_unassigned(backend):
    best, assign = backend.bnb_assign(-np.ones((3, 2), dtype=np.int64), np.array([2, 2], dtype=np.int64))
    assert best == 0 and assign.tolist() == [-1, -1, -1]


@settings(max_examples=150, deadline=None)
@given(
    st.integers(1, 5).flatmap(lambda t: st.integers(1, 4).flatmap(lambda b: st.tuples(
        arrays(np.int64, (t, b), elements=st.integers(-50, 50)),
        arrays(np.int64, (b,), elements=st.integers(0, 3)),
    )))
)
def test_bnb_equals_enumeration(case):
    surplus, capacity = case
    best, assign = _fallback.bnb_assign(surplus, capacity)
    assert best == _brute_assign(surplus, capacity)
    used = np.bincount(assign[assign >= 0], minlength=len(capacity))
    assert (used <= capacity).all()


@pytest.mark.skipif(COMPILED is None, reason="compiled kernels not built")
@settings(max_examples=200, deadline=None)
@given(
    st.integers(1, 6).flatmap(lambda t: st.integers(1, 6).flatmap(lambda b: st.tuples(
        arrays(np.int64, (t, b), elements=st.integers(-10**6, 10**6)),
        arrays(np.int64, (b,), elements=st.integers(0, 3)),
    )))
)
def test_bnb_backends_agree(case):
    surplus, capacity = case
    b1, a1 = _fallback.bnb_assign(surplus, capacity)
    b2, a2 = COMPILED.bnb_assign(surplus, capacity)
    assert b1 == b2
    assert np.asarray(a1).tolist() == np.asarray(a2).tolist()


@pytest.mark.skipif(COMPILED is None, reason="compiled kernels not built")
@settings(max_examples=200, deadline=None)
@given(
    st.integers(1, 8).flatmap(lambda c: st.integers(1, 12).flatmap(lambda u: st.integers(1, 30).flatmap(
        lambda p: st.tuples(
            arrays(np.int64, (c, u), elements=st.integers(-40, 40)),
            arrays(np.int8, (p, u), elements=st.sampled_from([-1, 1])),
        ))))
)
def test_flip_max_backends_agree(case):
    deltas, signs = case
    assert np.asarray(_fallback.flip_max(deltas, signs)).tolist() == \
        np.asarray(COMPILED.flip_max(deltas, signs)).tolist()


def test_pure_python_switch(monkeypatch):
    import importlib
    monkeypatch.setenv("STEERAUDIT_PURE_PYTHON", "1")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == "python"
        assert mod.flip_max is _fallback.flip_max
    finally:
        monkeypatch.delenv("STEERAUDIT_PURE_PYTHON")
        importlib.reload(kernels)
