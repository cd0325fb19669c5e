"""Sampling diagnostics for moderator pseudo-R2.

* bootstrap percentile interval over resampled configurations,
* one-sided permutation null over shuffled moderator labels,
* leave-one-level-out refits.

Draw ``i`` of each diagnostic uses its own ``substream(seed, name, i)``, so
results do not depend on how the draws are scheduled.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import kernels
from .effects import EffectEstimate
from .meta import encode_levels, fit_moderator_arrays, moderator_labels
from .rng import substream

log = logging.getLogger(__name__)

ALPHA = 0.05
_BLOCK = 512


class SparseModeratorError(ValueError):
    """Too many bootstrap resamples lost a moderator contrast."""


def _arrays(effects: Sequence[EffectEstimate], moderator: str):
    y = np.array([e.effect for e in effects], float)
    v = np.array([e.variance for e in effects], float)
    codes, levels = encode_levels(moderator_labels(effects, moderator))
    return y, v, codes, levels


def _check(k: int, n_levels: int) -> None:
    if n_levels < 2:
        raise ValueError("moderator has a single level: no contrast")
    if k < n_levels + 1:
        raise ValueError(f"K={k} needs at least {n_levels + 1} configurations for {n_levels} levels")


def observed_r2(y, v, codes, n_levels) -> float:
    t_null, t_res = kernels.moderator_tau2(y, v, codes, n_levels)
    return float(kernels.r2_from_tau2(float(t_null), float(t_res)))


# draws depend only on (seed, K, counter), so they are shared across features and moderators
@lru_cache(maxsize=8)
def _boot_block(seed: int, k: int, block: int) -> np.ndarray:
    start = block * _BLOCK
    return np.array([substream(seed, "bootstrap", a).integers(0, k, k) for a in range(start, start + _BLOCK)],
                    dtype=np.int64).reshape(_BLOCK, k)


def _boot_draw(seed: int, k: int, attempt: int) -> np.ndarray:
    return _boot_block(seed, k, attempt // _BLOCK)[attempt % _BLOCK]


@lru_cache(maxsize=8)
def _perm_matrix(seed: int, k: int, n_perm: int) -> np.ndarray:
    perms = np.array([substream(seed, "permutation", i).permutation(k) for i in range(n_perm)],
                     dtype=np.int64).reshape(n_perm, k)
    perms.setflags(write=False)
    return perms


def bootstrap_r2(y, v, codes, n_levels: int, n_boot: int = 2000, seed: int = 0) -> tuple[np.ndarray, int]:
    """Resampled R2 values and the number of degenerate draws that were redrawn."""
    k = len(y)
    _check(k, n_levels)
    rows = []
    attempt = 0
    degenerate = 0
    while len(rows) < n_boot:
        idx = _boot_draw(seed, k, attempt)
        attempt += 1
        present = len(np.unique(codes[idx]))
        if present < 2 or k - present < 1:
            degenerate += 1
            if degenerate > n_boot:
                raise SparseModeratorError("moderator too sparse: more than half of bootstrap resamples are degenerate")
            continue
        rows.append(idx)
    idx = np.array(rows, dtype=np.int64).reshape(n_boot, k)
    r2 = np.asarray(kernels.moderator_r2_many(y, v, idx, codes[idx], n_levels), float)
    if degenerate:
        log.info("bootstrap redrew %d degenerate resamples", degenerate)
    return r2, degenerate


def bootstrap_ci(effects: Sequence[EffectEstimate], moderator: str, n_boot: int = 2000,
                 seed: int = 0, level: float = 0.95) -> tuple[float, float]:
    y, v, codes, levels = _arrays(effects, moderator)
    r2, _ = bootstrap_r2(y, v, codes, len(levels), n_boot, seed)
    tail = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(r2, [tail, 100.0 - tail])
    return float(lo), float(hi)


def permutation_r2(y, v, codes, n_levels: int, n_perm: int = 2000, seed: int = 0) -> np.ndarray:
    k = len(y)
    _check(k, n_levels)
    perms = _perm_matrix(seed, k, n_perm)
    idx = np.broadcast_to(np.arange(k, dtype=np.int64), (n_perm, k))
    return np.asarray(kernels.moderator_r2_many(y, v, idx, codes[perms], n_levels), float)


def permutation_p(observed: float, null: np.ndarray) -> float:
    # tolerance absorbs summation-order rounding when a shuffle reproduces the partition
    hits = int(np.sum(null >= observed - 1e-12))
    return (1 + hits) / (1 + len(null))


def permutation_null(effects: Sequence[EffectEstimate], moderator: str, n_perm: int = 2000,
                     seed: int = 0) -> tuple[float, float, float]:
    """``(null mean, null 95th percentile, one-sided p)``."""
    y, v, codes, levels = _arrays(effects, moderator)
    null = permutation_r2(y, v, codes, len(levels), n_perm, seed)
    obs = observed_r2(y, v, codes, len(levels))
    return float(null.mean()), float(np.percentile(null, 95)), permutation_p(obs, null)


def leave_one_out(effects: Sequence[EffectEstimate], moderator: str) -> tuple[float | None, float | None, list[tuple[str, float | None]]]:
    """Refit with each level's configurations removed.

    Refits that leave fewer than two levels, or no residual degrees of
    freedom, are reported as None and excluded from the range.
    """
    labels = moderator_labels(effects, moderator)
    levels = sorted(set(labels))
    if len(levels) < 3:
        raise ValueError("leave-one-out needs at least three moderator levels")
    per_level: list[tuple[str, float | None]] = []
    for level in levels:
        keep = [i for i, lab in enumerate(labels) if lab != level]
        sub_labels = [labels[i] for i in keep]
        try:
            fit = fit_moderator_arrays([effects[i].effect for i in keep], [effects[i].variance for i in keep],
                                       sub_labels, moderator)
        except ValueError:
            log.info("leave-one-out: dropping %s leaves a degenerate design; skipped", level)
            per_level.append((level, None))
            continue
        per_level.append((level, fit.r2))
    vals = [r for _, r in per_level if r is not None]
    return (min(vals) if vals else None), (max(vals) if vals else None), per_level


@dataclass
class RobustnessReport:
    feature: str
    moderator: str
    K: int
    levels: int
    r2_observed: float
    boot_ci: tuple[float, float]
    perm_null_mean: float
    perm_null_p95: float
    perm_p: float
    loo_range: tuple[float | None, float | None]
    passes_chance_baseline: bool
    loo_per_level: list[tuple[str, float | None]] = field(default_factory=list)
    boot_redraws: int = 0
    n_boot: int = 2000
    n_perm: int = 2000
    seed: int = 0

    def to_json(self) -> dict:
        d = asdict(self)
        d["boot_ci"] = list(self.boot_ci)
        d["loo_range"] = list(self.loo_range)
        d["loo_per_level"] = [list(x) for x in self.loo_per_level]
        return d


def robustness_report(effects: Sequence[EffectEstimate], moderator: str, *, n_boot: int = 2000,
                      n_perm: int = 2000, seed: int = 0) -> RobustnessReport:
    features = {e.feature for e in effects}
    if len(features) != 1:
        raise ValueError(f"robustness expects effects of one feature, got {sorted(features)}")
    y, v, codes, levels = _arrays(effects, moderator)
    fit = fit_moderator_arrays(y, v, moderator_labels(effects, moderator), moderator)
    boot, redraws = bootstrap_r2(y, v, codes, len(levels), n_boot, seed)
    lo, hi = np.percentile(boot, [2.5, 97.5])
    null = permutation_r2(y, v, codes, len(levels), n_perm, seed)
    p = permutation_p(fit.r2, null)
    if len(levels) >= 3:
        loo_min, loo_max, per_level = leave_one_out(effects, moderator)
    else:
        loo_min = loo_max = None
        per_level = []
    return RobustnessReport(
        feature=features.pop(),
        moderator=moderator,
        K=len(y),
        levels=len(levels),
        r2_observed=fit.r2,
        boot_ci=(float(lo), float(hi)),
        perm_null_mean=float(null.mean()),
        perm_null_p95=float(np.percentile(null, 95)),
        perm_p=p,
        loo_range=(loo_min, loo_max),
        passes_chance_baseline=p < ALPHA,
        loo_per_level=per_level,
        boot_redraws=redraws,
        n_boot=n_boot,
        n_perm=n_perm,
        seed=seed,
    )
