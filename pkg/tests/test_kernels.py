import importlib
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trajmeta import _kernels_py as py
from trajmeta import kernels

cy = pytest.importorskip("trajmeta._kernels")


def intern(raw):
    ids = {}
    return [ids.setdefault(x, len(ids)) for x in raw]


def same(a, b):
    assert len(a) == len(b)
    for x, y in zip(a, b):
        assert (math.isnan(x) and math.isnan(y)) or x == y


@st.composite
def traj(draw):
    n = draw(st.integers(0, 40))
    cats = draw(st.lists(st.integers(0, 5), min_size=n, max_size=n))
    errs = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    acts = intern(draw(st.lists(st.integers(0, 6), min_size=n, max_size=n)))
    return cats, errs, acts


@settings(max_examples=300, deadline=None)
@given(traj(), st.integers(1, 3))
def test_trajectory_stats_twins_agree(t, min_len):
    same(cy.trajectory_stats(*t, min_len=min_len), py.trajectory_stats(*t, min_len=min_len))


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 35), st.integers(0, 1)), max_size=40))
def test_motif_stats_twins_agree(seq):
    states = [s for s, _ in seq]
    post = [p for _, p in seq]
    same(cy.motif_stats(states, post), py.motif_stats(states, post))


@st.composite
def design(draw):
    n_levels = draw(st.integers(2, 4))
    k = draw(st.integers(n_levels + 1, 15))
    labels = [i % n_levels for i in range(k)]
    y = draw(st.lists(st.floats(-1, 1), min_size=k, max_size=k))
    v = draw(st.lists(st.floats(1e-3, 1.0), min_size=k, max_size=k))
    return np.array(y), np.array(v), np.array(labels), n_levels


@settings(max_examples=200, deadline=None)
@given(design())
def test_moderator_tau2_twins_agree(d):
    a = cy.moderator_tau2(*d)
    b = py.moderator_tau2(*d)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(design(), st.integers(0, 2**32 - 1))
def test_moderator_r2_many_twins_agree(d, seed):
    y, v, labels, n_levels = d
    rng = np.random.default_rng(seed)
    idx = np.array([rng.permutation(len(y)) for _ in range(5)])
    perm_labels = labels[idx]
    a = cy.moderator_r2_many(y, v, idx, perm_labels, n_levels)
    b = py.moderator_r2_many(y, v, idx, perm_labels, n_levels)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-15)


def test_backend_fallback(monkeypatch):
    monkeypatch.setenv("TRAJMETA_PURE_PYTHON", "1")
    try:
        mod = importlib.reload(kernels)
        assert mod.BACKEND == "python"
        assert mod.trajectory_stats is py.trajectory_stats
    finally:
        monkeypatch.delenv("TRAJMETA_PURE_PYTHON")
        importlib.reload(kernels)
    assert kernels.BACKEND == "cython"
