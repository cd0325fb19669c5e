"""Binary behavioral patterns P1-P7 and their threshold manifest."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from statistics import median
from typing import Sequence

from .annotate import AnnotatedTrajectory
from .features import FeatureVector, trajectory_features
from .model import ActionCategory

PATTERN_NAMES = ("p1", "p2", "p3", "p4", "p5", "p6", "p7")
PATTERN_LABELS = {
    "p1": "navigate_before_modify",
    "p2": "moderate_exploration",
    "p3": "short_cascades",
    "p4": "fast_cascade_recovery",
    "p5": "short_trajectory",
    "p6": "low_late_entropy",
    "p7": "test_after_modify",
}


@dataclass(frozen=True)
class ThresholdManifest:
    cascade_median: float
    length_median: float
    late_entropy_median: float
    exploration_band: tuple[float, float] = (0.30, 0.50)
    recovery_max_turns: int = 2
    source: str = ""

    def __post_init__(self) -> None:
        lo, hi = self.exploration_band
        object.__setattr__(self, "exploration_band", (float(lo), float(hi)))
        if not lo < hi:
            raise ValueError("exploration_band needs low < high")
        if self.recovery_max_turns < 1:
            raise ValueError("recovery_max_turns must be >= 1")
        if min(self.cascade_median, self.length_median, self.late_entropy_median) < 0:
            raise ValueError("medians must be non-negative")

    def to_json(self) -> dict:
        d = asdict(self)
        d["exploration_band"] = list(self.exploration_band)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ThresholdManifest":
        missing = [k for k in ("cascade_median", "length_median", "late_entropy_median") if k not in d]
        if missing:
            raise ValueError(f"threshold manifest missing {', '.join(missing)}")
        return cls(
            cascade_median=float(d["cascade_median"]),
            length_median=float(d["length_median"]),
            late_entropy_median=float(d["late_entropy_median"]),
            exploration_band=tuple(d.get("exploration_band", (0.30, 0.50))),
            recovery_max_turns=int(d.get("recovery_max_turns", 2)),
            source=str(d.get("source", "")),
        )

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ThresholdManifest":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def compute_thresholds(trajs: Sequence[AnnotatedTrajectory], source: str = "") -> ThresholdManifest:
    """Medians over a reference corpus.

    The cascade median is taken over trajectories with at least one error,
    the domain on which P3 is defined.
    """
    if not trajs:
        raise ValueError("empty reference corpus")
    max_casc = [max((n for _, n in a.cascades), default=0) for a in trajs
                if any(e is not None for e in a.error_types)]
    return ThresholdManifest(
        cascade_median=float(median(max_casc)) if max_casc else 0.0,
        length_median=float(median(a.n for a in trajs)),
        late_entropy_median=float(median(trajectory_features(a).late_stage_entropy for a in trajs)),
        source=source or f"{len(trajs)} reference trajectories",
    )


@dataclass(frozen=True)
class PatternVector:
    p1: bool | None
    p2: bool
    p3: bool | None
    p4: bool | None
    p5: bool
    p6: bool | None
    p7: bool | None

    def as_dict(self) -> dict[str, bool | None]:
        return {name: getattr(self, name) for name in PATTERN_NAMES}


def detect_patterns(a: AnnotatedTrajectory, f: FeatureVector | None, m: ThresholdManifest) -> PatternVector:
    if f is None:
        f = trajectory_features(a)
    cats = a.categories
    try:
        first_mod = cats.index(ActionCategory.MODIFICATION)
    except ValueError:
        first_mod = None

    if first_mod is None:
        p1 = p7 = None
    else:
        p1 = ActionCategory.EXPLORATION in cats[:first_mod]
        p7 = ActionCategory.TEST in cats[first_mod + 1:]

    lo, hi = m.exploration_band
    p2 = lo <= f.exploration_ratio <= hi

    if any(e is not None for e in a.error_types):
        # errors below --cascade-min-len leave no cascade; the max is then 0
        p3 = max((n for _, n in a.cascades), default=0) < m.cascade_median
    else:
        p3 = None
    p4 = a.cascades[0][1] <= m.recovery_max_turns if a.cascades else None

    p5 = a.n < m.length_median
    # late-stage entropy needs at least one transition inside the late window
    p6 = f.late_stage_entropy < m.late_entropy_median if a.n - (3 * a.n) // 4 >= 2 else None
    return PatternVector(p1, p2, p3, p4, p5, p6, p7)
