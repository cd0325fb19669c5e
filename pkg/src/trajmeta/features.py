"""Per-trajectory behavioral features and per-configuration summaries.

Conventions (all entropies in nats):

* front-loading window: turns with index <= ceil(N/4); late window: index > floor(3N/4);
* first-modification timing and phase-transition point are normalized as
  (index - 1) / (N - 1) and absent (NaN) when undefined or N == 1;
* the dominant category is the mode of a trailing 5-turn window, ties keeping
  the current mode, then the lowest category code;
* cascade rate looks at turns i+1..i+3 (truncated at the end); a recovery is an
  error whose next turn is clean, i.e. the cascade ends there and the agent
  continues; a final-turn error counts in the denominator only;
* fractions with an empty denominator are 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from statistics import median
from typing import Iterable, Sequence

from . import kernels
from .annotate import AnnotatedTrajectory
from .model import ConfigurationId

FEATURE_NAMES: tuple[str, ...] = (
    "exploration_ratio",
    "modification_ratio",
    "test_ratio",
    "navigation_ratio",
    "trajectory_length_log",
    "transition_entropy",
    "exploration_frontloading",
    "first_modification_timing",
    "phase_transition_point",
    "late_stage_entropy",
    "error_rate",
    "cascade_rate",
    "recovery_rate",
    "repetition_rate",
    "mean_cascade_length",
    "productive_turn_ratio",
)

# kernel output order: FEATURE_NAMES without trajectory_length_log
_KERNEL_ORDER = tuple(n for n in FEATURE_NAMES if n != "trajectory_length_log")


@dataclass(frozen=True)
class FeatureVector:
    exploration_ratio: float
    modification_ratio: float
    test_ratio: float
    navigation_ratio: float
    trajectory_length_log: float
    transition_entropy: float
    exploration_frontloading: float
    first_modification_timing: float | None
    phase_transition_point: float | None
    late_stage_entropy: float
    error_rate: float
    cascade_rate: float
    recovery_rate: float
    repetition_rate: float
    mean_cascade_length: float
    productive_turn_ratio: float

    def as_dict(self) -> dict[str, float | None]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def encode(a: AnnotatedTrajectory) -> tuple[list[int], list[int], list[int]]:
    """Integer codes (categories, error flags, interned action ids) for the kernels."""
    cats = [c.code for c in a.categories]
    errs = [1 if e is not None else 0 for e in a.error_types]
    ids: dict[str, int] = {}
    acts = [ids.setdefault(turn.action.signature, len(ids)) for turn in a.base.turns]
    return cats, errs, acts


def trajectory_features(a: AnnotatedTrajectory) -> FeatureVector:
    cats, errs, acts = encode(a)
    raw = kernels.trajectory_stats(cats, errs, acts)
    values = {name: float(x) for name, x in zip(_KERNEL_ORDER, raw)}
    # cascades carry the annotation-time minimum run length
    if a.cascades:
        values["mean_cascade_length"] = sum(n for _, n in a.cascades) / len(a.cascades)
    else:
        values["mean_cascade_length"] = 0.0
    for key in ("first_modification_timing", "phase_transition_point"):
        if math.isnan(values[key]):
            values[key] = None
    values["trajectory_length_log"] = math.log1p(a.n)
    return FeatureVector(**values)


@dataclass(frozen=True)
class ConfigFeatureSummary:
    config: ConfigurationId
    n_trajectories: int
    features: dict[str, float | None]
    mean_turns: float
    median_turns: float

    def vector(self, names: Sequence[str] = FEATURE_NAMES) -> list[float]:
        missing = [n for n in names if self.features.get(n) is None]
        if missing:
            raise KeyError(f"{self.config}: missing feature(s) {', '.join(missing)}")
        return [float(self.features[n]) for n in names]


def _median_present(values: Iterable[float | None]) -> float | None:
    present = [v for v in values if v is not None]
    return median(present) if present else None


def config_summary(trajs: Sequence[AnnotatedTrajectory],
                   vectors: Sequence[FeatureVector] | None = None) -> ConfigFeatureSummary:
    """Median of each feature over one configuration's trajectories."""
    if not trajs:
        raise ValueError("config_summary needs at least one trajectory")
    keys = {a.base.config.key for a in trajs}
    if len(keys) > 1:
        raise ValueError(f"mixed configurations: {sorted(keys)}")
    if vectors is None:
        vectors = [trajectory_features(a) for a in trajs]
    turns = [a.n for a in trajs]
    med_turns = median(turns)
    agg: dict[str, float | None] = {}
    for name in FEATURE_NAMES:
        if name == "trajectory_length_log":
            agg[name] = math.log1p(med_turns)
        else:
            agg[name] = _median_present(getattr(v, name) for v in vectors)
    return ConfigFeatureSummary(
        config=trajs[0].base.config,
        n_trajectories=len(trajs),
        features=agg,
        mean_turns=sum(turns) / len(turns),
        median_turns=float(med_turns),
    )
