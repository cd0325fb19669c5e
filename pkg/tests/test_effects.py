import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from trajmeta.effects import (CRAMERS_V, RANK_BISERIAL, FilterPolicy, TrajectoryRecord, cramers_v_signed,
                              eta2_magnitude, kruskal_eta2, kruskal_h, mann_whitney_u, paired_wilcoxon,
                              per_config_effects, rank_biserial)
from trajmeta.model import ConfigurationId


def pair_count_u(res, unres):
    return sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in res for b in unres)


def chi2_v(table):
    chi2 = stats.chi2_contingency(np.array(table, float), correction=False)[0]
    (a, b), (c, d) = table
    return math.copysign(math.sqrt(chi2 / (a + b + c + d)), a * d - b * c)


@pytest.mark.parametrize("table, expected", [
    ([[10, 0], [0, 10]], 1.0),
    ([[5, 5], [5, 5]], 0.0),
    ([[8, 2], [4, 6]], math.sqrt(20 * 40 ** 2 / (10 * 10 * 12 * 8) / 20)),
])
def test_cramers_v_examples(table, expected):
    v, var = cramers_v_signed(table)
    assert v == pytest.approx(expected, abs=1e-12)
    assert var == pytest.approx(1 / sum(map(sum, table)))


def test_cramers_v_example_value():
    assert cramers_v_signed([[8, 2], [4, 6]])[0] == pytest.approx(0.4082, abs=5e-5)


def test_cramers_v_saturated_is_undefined():
    assert cramers_v_signed([[7, 3], [0, 0]]) is None


def test_cramers_v_rejects_negative():
    with pytest.raises(ValueError):
        cramers_v_signed([[1, -1], [1, 1]])


cells = st.integers(0, 40)
tables = st.tuples(cells, cells, cells, cells).map(lambda t: [[t[0], t[1]], [t[2], t[3]]])


@settings(max_examples=300)
@given(tables)
def test_cramers_v_symmetries(t):
    out = cramers_v_signed(t)
    if out is None:
        return
    both = cramers_v_signed([t[1][::-1], t[0][::-1]])
    rows = cramers_v_signed([t[1], t[0]])
    assert both[0] == pytest.approx(out[0], abs=1e-12)
    assert rows[0] == pytest.approx(-out[0], abs=1e-12)
    assert out[0] == pytest.approx(chi2_v(t), abs=1e-12)


def test_rank_biserial_examples():
    assert rank_biserial([1, 2], [10, 12])[0] == 1.0
    assert rank_biserial([3, 1, 2], [2, 3, 1])[0] == 0.0
    assert mann_whitney_u([1, 2, 10], [3, 4]) == 2.0
    assert rank_biserial([1, 2, 10], [3, 4])[0] == pytest.approx(1 / 3)


def test_rank_biserial_variance():
    assert rank_biserial([1, 2, 3], [4, 5])[1] == pytest.approx(6 / 18)


def test_rank_biserial_empty_group():
    with pytest.raises(ValueError):
        rank_biserial([], [1])


groups = st.lists(st.integers(0, 6).map(float), min_size=1, max_size=15)


@settings(max_examples=300)
@given(groups, groups)
def test_rank_biserial_properties(res, unres):
    r, _ = rank_biserial(res, unres)
    assert mann_whitney_u(res, unres) == pytest.approx(pair_count_u(res, unres), abs=1e-12)
    assert rank_biserial(unres, res)[0] == pytest.approx(-r, abs=1e-12)
    # strictly monotone transform
    assert rank_biserial([math.exp(x) for x in res], [math.exp(x) for x in unres])[0] == pytest.approx(r, abs=1e-12)
    assert -1.0 <= r <= 1.0


def test_kruskal_matches_scipy():
    rng = np.random.default_rng(3)
    for _ in range(50):
        gs = [rng.integers(0, 5, rng.integers(2, 10)).astype(float) for _ in range(rng.integers(2, 5))]
        if len(np.unique(np.concatenate(gs))) < 2:
            continue
        assert kruskal_h(gs) == pytest.approx(stats.kruskal(*gs).statistic, rel=1e-12)


def test_kruskal_eta2_examples():
    assert kruskal_eta2([[1, 2, 3], [1, 2, 3]]) == pytest.approx(0.0, abs=1e-12)
    e = kruskal_eta2([list(range(10)), list(range(10, 20))])
    assert e > 0.7
    h = kruskal_h([list(range(10)), list(range(10, 20))])
    assert e == pytest.approx((h - 1) / 18)


def test_eta2_magnitude_boundary():
    assert eta2_magnitude(0.14) == "large"
    assert eta2_magnitude(0.1399) == "medium"


def test_kruskal_needs_two_groups():
    with pytest.raises(ValueError):
        kruskal_eta2([[1, 2, 3]])


def test_wilcoxon_all_positive():
    stat, p = paired_wilcoxon([1, 2, 3, 4, 5, 6])
    assert stat == 0.0
    assert p < 0.05


def test_wilcoxon_antisymmetric():
    _, p = paired_wilcoxon([1, -1, 2, -2, 3, -3])
    assert p == pytest.approx(1.0)


def test_wilcoxon_exact_enumeration():
    d = [0.5, -1.2, 2.0, 3.1, -0.7, 1.5, 2.2, -2.9]
    ranks = stats.rankdata(np.abs(d))
    w_plus = ranks[np.array(d) > 0].sum()
    dist = [sum(r for r, s in zip(ranks, signs) if s) for signs in itertools.product([0, 1], repeat=8)]
    stat, p = paired_wilcoxon(d)
    assert stat == min(w_plus, ranks.sum() - w_plus)
    lo = np.mean([x <= w_plus for x in dist])
    hi = np.mean([x >= w_plus for x in dist])
    assert p == pytest.approx(min(1.0, 2 * min(lo, hi)), abs=1e-12)
    assert p == pytest.approx(stats.wilcoxon(d, method="exact").pvalue, abs=1e-12)


def test_wilcoxon_zero_differences():
    with pytest.raises(ValueError):
        paired_wilcoxon([0, 0, 0])


def test_wilcoxon_normal_approximation_large_n():
    d = np.arange(1, 41) * np.where(np.arange(40) % 3 == 0, -1, 1)
    _, p = paired_wilcoxon(d)
    assert p == pytest.approx(stats.wilcoxon(d, method="approx", correction=False).pvalue, rel=1e-9)


def _records(config, n, n_res, value=lambda i, y: float(i)):
    return [TrajectoryRecord(config, f"{config.llm}-{i}", i < n_res, {"x": value(i, i < n_res)},
                             {"p": i % 2 == 0}) for i in range(n)]


def test_filter_policy():
    small = ConfigurationId("a", "small")
    few = ConfigurationId("b", "few")
    ok = ConfigurationId("c", "ok")
    recs = _records(small, 19, 10) + _records(few, 30, 3) + _records(ok, 30, 10)
    effects, skips = per_config_effects(recs, ["x"], ["p"], FilterPolicy())
    assert [(s.config.llm, s.reason) for s in skips] == [("small", "min_total"), ("few", "min_resolved")]
    assert [(e.feature, e.kind) for e in effects] == [("p", CRAMERS_V), ("x", RANK_BISERIAL)]
    x = effects[1]
    assert (x.n_resolved, x.n_unresolved) == (10, 20)
    assert x.effect == 1.0


def test_effects_sorted_by_feature_then_config():
    recs = _records(ConfigurationId("z", "m"), 30, 10) + _records(ConfigurationId("a", "m"), 30, 10)
    effects, _ = per_config_effects(recs, ["x"], ["p"], FilterPolicy())
    keys = [(e.feature, e.config.framework) for e in effects]
    assert keys == sorted(keys)


def test_bootstrap_variance_is_deterministic():
    recs = _records(ConfigurationId("a", "m"), 40, 15, value=lambda i, y: float(i % 7) + (0 if y else 2))
    a, _ = per_config_effects(recs, ["x"], ["p"], FilterPolicy(), variance="bootstrap", seed=5)
    b, _ = per_config_effects(recs, ["x"], ["p"], FilterPolicy(), variance="bootstrap", seed=5)
    n, _ = per_config_effects(recs, ["x"], ["p"], FilterPolicy())
    assert a == b
    assert [e.effect for e in a] == [e.effect for e in n]
    assert all(e.variance > 0 for e in a)


def test_unknown_variance_mode():
    with pytest.raises(ValueError):
        per_config_effects([], ["x"], [], variance="jackknife")
