"""Per-configuration effect sizes.

Sign conventions: a positive signed Cramer's V means pattern presence goes
with resolution; a positive rank-biserial r means lower feature values go
with resolution.

Sampling variances default to closed forms, Var(V) ~ 1/n for the 2x2 phi
coefficient and Var(r) = (n1 + n2 + 1) / (3 n1 n2) for the rank-biserial
correlation.  ``variance="bootstrap"`` instead resamples trajectories within
each outcome group of the configuration.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .model import ConfigurationId
from .rng import substream

CRAMERS_V = "cramers_v"
RANK_BISERIAL = "rank_biserial"
BOOTSTRAP_REPS = 200


@dataclass(frozen=True)
class EffectEstimate:
    config: ConfigurationId
    feature: str
    effect: float
    variance: float
    n_resolved: int
    n_unresolved: int
    kind: str

    def __post_init__(self) -> None:
        if not abs(self.effect) <= 1.0 + 1e-12:
            raise ValueError(f"effect out of [-1, 1]: {self.effect}")
        if not self.variance > 0:
            raise ValueError(f"variance must be positive: {self.variance}")


@dataclass(frozen=True)
class FilterPolicy:
    min_total: int = 20
    min_resolved: int = 5
    min_unresolved: int = 5

    def __post_init__(self) -> None:
        if min(self.min_total, self.min_resolved, self.min_unresolved) < 1:
            raise ValueError("filter thresholds must be positive")


def cramers_v_signed(table) -> tuple[float, float] | None:
    """Signed V for ``[[a, b], [c, d]]`` (rows present/absent, cols resolved/failed).

    Returns None when any marginal is zero.
    """
    (a, b), (c, d) = table
    if min(a, b, c, d) < 0:
        raise ValueError("negative cell count")
    n = a + b + c + d
    denom = (a + b) * (c + d) * (a + c) * (b + d)
    if n == 0 or denom == 0:
        return None
    v = (a * d - b * c) / math.sqrt(denom)
    return max(-1.0, min(1.0, v)), 1.0 / n


def mann_whitney_u(resolved: Sequence[float], unresolved: Sequence[float]) -> float:
    """U of the resolved group: pairs with resolved > unresolved, ties counting 1/2."""
    n1 = len(resolved)
    ranks = rankdata(np.concatenate([np.asarray(resolved, float), np.asarray(unresolved, float)]))
    return float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)


def rank_biserial(resolved: Sequence[float], unresolved: Sequence[float]) -> tuple[float, float]:
    n1, n2 = len(resolved), len(unresolved)
    if n1 < 1 or n2 < 1:
        raise ValueError("rank_biserial needs two non-empty groups")
    u = mann_whitney_u(resolved, unresolved)
    r = 1.0 - 2.0 * u / (n1 * n2)
    return r, (n1 + n2 + 1) / (3.0 * n1 * n2)


def _tie_term(ranks_input: np.ndarray) -> float:
    _, counts = np.unique(ranks_input, return_counts=True)
    return float(np.sum(counts.astype(float) ** 3 - counts))


def kruskal_h(groups: Sequence[Sequence[float]]) -> float:
    if len(groups) < 2:
        raise ValueError("kruskal needs at least two groups")
    if any(len(g) == 0 for g in groups):
        raise ValueError("kruskal groups must be non-empty")
    values = np.concatenate([np.asarray(g, float) for g in groups])
    n = len(values)
    ranks = rankdata(values)
    h = 0.0
    start = 0
    for g in groups:
        r = ranks[start:start + len(g)]
        h += r.sum() ** 2 / len(g)
        start += len(g)
    h = 12.0 / (n * (n + 1)) * h - 3.0 * (n + 1)
    correction = 1.0 - _tie_term(values) / (n ** 3 - n)
    if correction <= 0:
        return 0.0
    return h / correction


def kruskal_eta2(groups: Sequence[Sequence[float]]) -> float:
    k = len(groups)
    n = sum(len(g) for g in groups)
    h = kruskal_h(groups)
    if n - k < 1:
        raise ValueError("kruskal eta2 needs more observations than groups")
    return min(1.0, max(0.0, (h - k + 1) / (n - k)))


def eta2_magnitude(eta2: float) -> str:
    if eta2 >= 0.14:
        return "large"
    if eta2 >= 0.06:
        return "medium"
    if eta2 >= 0.01:
        return "small"
    return "negligible"


def _signed_rank_null(doubled_ranks: Sequence[int]) -> np.ndarray:
    """Exact null distribution of 2*W+ under random signs (counts per value)."""
    total = sum(doubled_ranks)
    dist = np.zeros(total + 1, dtype=float)
    dist[0] = 1.0
    for r in doubled_ranks:
        shifted = np.zeros_like(dist)
        shifted[r:] = dist[: total + 1 - r]
        dist = dist + shifted
    return dist / dist.sum()


def paired_wilcoxon(differences: Sequence[float], exact_max_n: int = 25) -> tuple[float, float]:
    """Signed-rank statistic min(W+, W-) and two-sided p-value.

    Zero differences are dropped; tied magnitudes get midranks.  The p-value
    is exact for up to ``exact_max_n`` nonzero differences, normal otherwise.
    """
    d = np.asarray(differences, float)
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise ValueError("all differences are zero")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    stat = min(w_plus, w_minus)
    if n <= exact_max_n:
        doubled = [int(round(2 * r)) for r in ranks]
        dist = _signed_rank_null(doubled)
        k = int(round(2 * w_plus))
        lower = dist[: k + 1].sum()
        upper = dist[k:].sum()
        p = min(1.0, 2.0 * min(lower, upper))
    else:
        mean = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0 - _tie_term(np.abs(d)) / 48.0
        z = (w_plus - mean) / math.sqrt(var) if var > 0 else 0.0
        p = math.erfc(abs(z) / math.sqrt(2.0))
    return stat, float(p)


@dataclass
class TrajectoryRecord:
    """One trajectory's outcome plus its continuous features and patterns."""

    config: ConfigurationId
    trajectory_id: str
    resolved: bool
    values: Mapping[str, float | None] = field(default_factory=dict)
    patterns: Mapping[str, bool | None] = field(default_factory=dict)


@dataclass(frozen=True)
class Skip:
    config: ConfigurationId
    feature: str
    reason: str


def _contingency(pairs: Iterable[tuple[bool, bool]]) -> list[list[int]]:
    t = [[0, 0], [0, 0]]
    for present, resolved in pairs:
        t[0 if present else 1][0 if resolved else 1] += 1
    return t


def _bootstrap_variance(stat, groups: tuple[list, list], seed: int, key: tuple[int, ...]) -> float | None:
    rng = substream(seed, "effect-bootstrap", *key)
    res, unres = (np.asarray(g, dtype=float) for g in groups)
    draws = []
    for _ in range(BOOTSTRAP_REPS):
        a = res[rng.integers(0, len(res), len(res))]
        b = unres[rng.integers(0, len(unres), len(unres))]
        out = stat(a, b)
        if out is not None:
            draws.append(out)
    if len(draws) < 2:
        return None
    var = float(np.var(draws, ddof=1))
    return var if var > 0 else None


def _v_from_groups(res: np.ndarray, unres: np.ndarray) -> float | None:
    table = [[int(res.sum()), int(unres.sum())],
             [int(len(res) - res.sum()), int(len(unres) - unres.sum())]]
    out = cramers_v_signed(table)
    return None if out is None else out[0]


def _r_from_groups(res: np.ndarray, unres: np.ndarray) -> float:
    return rank_biserial(res, unres)[0]


def per_config_effects(records: Sequence[TrajectoryRecord], features: Sequence[str],
                       patterns: Sequence[str], policy: FilterPolicy = FilterPolicy(), *,
                       variance: str = "normal", seed: int = 0) -> tuple[list[EffectEstimate], list[Skip]]:
    """Effect sizes for every (feature, configuration) that passes the filters.

    Output is sorted by (feature, framework, llm); skips are reported in the
    same order.
    """
    if variance not in ("normal", "bootstrap"):
        raise ValueError(f"unknown variance mode {variance!r}")
    by_config: dict[tuple[str, str], list[TrajectoryRecord]] = defaultdict(list)
    for rec in records:
        by_config[rec.config.key].append(rec)

    effects: list[EffectEstimate] = []
    skips: list[Skip] = []
    config_order = sorted(by_config)
    for ci, key in enumerate(config_order):
        recs = by_config[key]
        config = recs[0].config
        n_res = sum(r.resolved for r in recs)
        n_unres = len(recs) - n_res
        reason = None
        if len(recs) < policy.min_total:
            reason = "min_total"
        elif n_res < policy.min_resolved:
            reason = "min_resolved"
        elif n_unres < policy.min_unresolved:
            reason = "min_unresolved"
        if reason:
            skips.append(Skip(config, "*", reason))
            continue

        for fi, name in enumerate(features):
            res = [r.values.get(name) for r in recs if r.resolved]
            unres = [r.values.get(name) for r in recs if not r.resolved]
            res = [x for x in res if x is not None and not math.isnan(x)]
            unres = [x for x in unres if x is not None and not math.isnan(x)]
            if not res or not unres:
                skips.append(Skip(config, name, "undefined: empty outcome group"))
                continue
            r, var = rank_biserial(res, unres)
            if variance == "bootstrap":
                var = _bootstrap_variance(_r_from_groups, (res, unres), seed, (ci, fi)) or var
            effects.append(EffectEstimate(config, name, r, var, len(res), len(unres), RANK_BISERIAL))

        for pi, name in enumerate(patterns):
            pairs = [(r.patterns.get(name), r.resolved) for r in recs]
            pairs = [(bool(p), y) for p, y in pairs if p is not None]
            table = _contingency(pairs)
            out = cramers_v_signed(table)
            if out is None:
                skips.append(Skip(config, name, "undefined: degenerate contingency table"))
                continue
            v, var = out
            n1 = table[0][0] + table[1][0]
            n2 = table[0][1] + table[1][1]
            if variance == "bootstrap":
                res = [float(p) for p, y in pairs if y]
                unres = [float(p) for p, y in pairs if not y]
                var = _bootstrap_variance(_v_from_groups, (res, unres), seed,
                                          (ci, len(features) + pi)) or var
            effects.append(EffectEstimate(config, name, v, var, n1, n2, CRAMERS_V))

    effects.sort(key=lambda e: (e.feature, e.config.framework, e.config.llm))
    skips.sort(key=lambda s: (s.feature, s.config.framework, s.config.llm))
    return effects, skips
