"""DerSimonian-Laird random-effects pooling and single-moderator meta-regression."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .effects import EffectEstimate

UNIVERSAL = "universal"
MODERATE = "moderate"
CONFIG_SPECIFIC = "config_specific"
MODERATORS = ("framework", "llm_family")


def classify_i2(i2: float) -> str:
    """Heterogeneity class from I2 in percent."""
    if i2 < 25.0:
        return UNIVERSAL
    if i2 < 75.0:
        return MODERATE
    return CONFIG_SPECIFIC


@dataclass(frozen=True)
class MetaResult:
    feature: str
    K: int
    pooled_effect: float
    pooled_effect_fe: float
    Q: float
    tau2: float
    i2: float
    classification: str
    n_pos: int
    n_neg: int
    n_zero: int


def _fe_stats(y: np.ndarray, v: np.ndarray) -> tuple[float, float, float, float]:
    w = 1.0 / v
    sw = float(w.sum())
    mean = float((w * y).sum() / sw)
    q = float((w * (y - mean) ** 2).sum())
    c = sw - float((w * w).sum()) / sw
    return mean, q, c, sw


def dl_tau2(y, v) -> float:
    y = np.asarray(y, float)
    v = np.asarray(v, float)
    _, q, c, _ = _fe_stats(y, v)
    if c <= 0:
        return 0.0
    return max(0.0, (q - (len(y) - 1)) / c)


def i_squared(q: float, k: int) -> float:
    """I2 in percent; 0 when Q does not exceed its degrees of freedom."""
    df = k - 1
    if q <= df or q <= 0:
        return 0.0
    return 100.0 * (q - df) / q


def direction_split(effects: Sequence[EffectEstimate] | Sequence[float], zero_band: float = 0.0) -> tuple[int, int, int]:
    if zero_band < 0:
        raise ValueError("zero_band must be non-negative")
    vals = [e.effect if isinstance(e, EffectEstimate) else float(e) for e in effects]
    n_pos = sum(1 for x in vals if x > zero_band)
    n_neg = sum(1 for x in vals if x < -zero_band)
    return n_pos, n_neg, len(vals) - n_pos - n_neg


def pool_arrays(y, v, feature: str = "", zero_band: float = 0.0) -> MetaResult:
    y = np.asarray(y, float)
    v = np.asarray(v, float)
    k = len(y)
    if k < 2:
        raise ValueError(f"pooling {feature or 'effects'} needs K >= 2, got {k}")
    if np.any(v <= 0):
        raise ValueError("variances must be positive")
    mean_fe, q, c, _ = _fe_stats(y, v)
    tau2 = max(0.0, (q - (k - 1)) / c) if c > 0 else 0.0
    w_re = 1.0 / (v + tau2)
    mean_re = float((w_re * y).sum() / w_re.sum())
    i2 = i_squared(q, k)
    n_pos, n_neg, n_zero = direction_split(list(y), zero_band)
    return MetaResult(feature, k, mean_re, mean_fe, q, tau2, i2, classify_i2(i2), n_pos, n_neg, n_zero)


def pool(effects: Sequence[EffectEstimate], zero_band: float = 0.0) -> MetaResult:
    features = {e.feature for e in effects}
    if len(features) > 1:
        raise ValueError(f"pool expects one feature, got {sorted(features)}")
    feature = features.pop() if features else ""
    return pool_arrays([e.effect for e in effects], [e.variance for e in effects], feature, zero_band)


def moderator_labels(effects: Sequence[EffectEstimate], moderator: str) -> list[str]:
    if moderator == "framework":
        return [e.config.framework for e in effects]
    if moderator == "llm_family":
        return [e.config.llm_family for e in effects]
    raise ValueError(f"unknown moderator {moderator!r}; expected one of {MODERATORS}")


def encode_levels(labels: Sequence[str]) -> tuple[np.ndarray, list[str]]:
    levels = sorted(set(labels))
    index = {name: i for i, name in enumerate(levels)}
    return np.array([index[x] for x in labels], dtype=np.int64), levels


@dataclass(frozen=True)
class ModeratorFit:
    moderator: str
    levels: int
    K: int
    tau2_null: float
    tau2_residual: float
    r2: float
    level_effects: dict[str, float] = field(default_factory=dict)
    singleton_levels: tuple[str, ...] = ()
    feature: str = ""


def fit_moderator_arrays(y, v, labels: Sequence[str], moderator: str = "", feature: str = "") -> ModeratorFit:
    y = np.asarray(y, float)
    v = np.asarray(v, float)
    codes, levels = encode_levels(labels)
    k, p = len(y), len(levels)
    if p < 2:
        raise ValueError(f"moderator {moderator or '?'} has a single level: no contrast")
    if k - p < 1:
        raise ValueError(f"moderator {moderator or '?'}: K={k} leaves no residual degrees of freedom for {p} levels")
    tau2_null, tau2_res = kernels.moderator_tau2(y, v, codes, p)
    r2 = float(kernels.r2_from_tau2(float(tau2_null), float(tau2_res)))
    w = 1.0 / (v + tau2_res)
    level_effects = {}
    for g, name in enumerate(levels):
        m = codes == g
        level_effects[name] = float((w[m] * y[m]).sum() / w[m].sum())
    counts = np.bincount(codes, minlength=p)
    singletons = tuple(name for name, n in zip(levels, counts) if n == 1)
    return ModeratorFit(moderator, p, k, float(tau2_null), float(tau2_res), r2, level_effects, singletons, feature)


def meta_regress(effects: Sequence[EffectEstimate], moderator: str) -> ModeratorFit:
    """Dummy-coded moderator fit; R2 = 1 - tau2_residual / tau2_null, clipped to [0, 1].

    tau2_residual is the method-of-moments estimate from the residual Q of
    the fixed-effect weighted fit; level effects are re-estimated with the
    resulting random-effects weights.  A null tau2 of zero gives R2 = 0.
    """
    features = {e.feature for e in effects}
    feature = features.pop() if len(features) == 1 else ""
    return fit_moderator_arrays([e.effect for e in effects], [e.variance for e in effects],
                                moderator_labels(effects, moderator), moderator, feature)


def group_by_feature(effects: Sequence[EffectEstimate]) -> dict[str, list[EffectEstimate]]:
    out: dict[str, list[EffectEstimate]] = {}
    for e in effects:
        out.setdefault(e.feature, []).append(e)
    return out
