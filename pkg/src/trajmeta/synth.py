"""Synthetic trajectories with planted regimes and planted outcome effects.

Commands and observation texts are drawn from templates that the default
rule files classify as intended, so downstream annotation runs the real
rules.  Outcomes follow a logistic model on one per-trajectory quantity,
z-scored over the batch generated for a configuration:

    logit P(resolved) = base_logit - direction * strength * z

so ``direction=+1`` plants "lower value goes with resolution", matching the
sign convention of the rank-biserial effect.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .model import (CATEGORIES, Action, ActionCategory, ConfigurationId, Observation,
                    Outcome, Trajectory, Turn)
from .rng import substream

OUTCOME_FEATURES = ("length", "error_rate", "exploration_ratio", "repetition_rate")

_COMMANDS: dict[ActionCategory, tuple[str, ...]] = {
    ActionCategory.EXPLORATION: (
        "cat src/module_{a}.py",
        "grep -rn 'symbol_{a}' src/",
        "find . -name 'part_{a}*.py'",
        "ls -la src/pkg_{a}",
        "head -n {b} src/module_{a}.py",
    ),
    ActionCategory.MODIFICATION: (
        "sed -i 's/old_{a}/new_{a}/' src/module_{b}.py",
        "patch -p1 < fix_{a}.diff",
        "cp src/module_{a}.py src/module_{a}.bak",
        "touch src/new_{a}.py",
    ),
    ActionCategory.TEST: (
        "pytest tests/test_{a}.py -x",
        "python3 -m pytest tests/test_mod_{a}.py::test_case_{b}",
        "python reproduce_{a}.py",
    ),
    ActionCategory.NAVIGATION: (
        "cd /repo/pkg_{a}",
        "cd src/sub_{a} && pwd",
    ),
    ActionCategory.UTILITY: (
        "git diff -- src/module_{a}.py",
        "pip install dep-{a}",
        "echo checkpoint {a}",
    ),
    ActionCategory.UNKNOWN: (
        "frobnicate --target {a}",
        "xyzzy run {a}",
    ),
}

ERROR_TEMPLATES: dict[str, str] = {
    "test_failure": "FAILED tests/test_{a}.py::test_case - assert 0\n1 failed, {b} passed",
    "traceback": "Traceback (most recent call last):\n  File \"src/module_{a}.py\", line {b}\nKeyError: 'k{a}'",
    "syntax_error": "  File \"src/module_{a}.py\", line {b}\nSyntaxError: invalid syntax",
    "import_error": "ModuleNotFoundError: No module named 'pkg_{a}'",
    "file_not_found": "cat: src/missing_{a}.py: No such file or directory",
    "permission_denied": "bash: /root/locked_{a}: Permission denied",
    "timeout": "command timed out after {b} seconds",
    "command_not_found": "bash: tool_{a}: command not found",
    "assertion_error": "AssertionError: expected {a}, got {b}",
    "type_error": "TypeError: unsupported operand type(s) for +: 'int' and 'str'",
    "value_error": "ValueError: invalid literal for int() with base 10: 'v{a}'",
    "patch_apply_failure": "Hunk #1 FAILED at {b}.\n1 out of 1 hunk FAILED",
    "merge_conflict": "CONFLICT (content): Merge conflict in src/module_{a}.py",
    "nonzero_exit": "process exited with code {c}",
    "other_error": "error: step {a} could not complete",
}

CLEAN_TEMPLATES = (
    "ok",
    "{b} lines",
    "done in {b} ms",
    "def function_{a}():\n    return {b}",
)


@dataclass(frozen=True)
class OutcomeModel:
    feature: str = "length"
    direction: int = 1
    strength: float = 0.0
    base_logit: float = 0.0

    def __post_init__(self) -> None:
        if self.feature not in OUTCOME_FEATURES:
            raise ValueError(f"unknown outcome feature {self.feature!r}; expected one of {OUTCOME_FEATURES}")
        if self.direction not in (-1, 0, 1):
            raise ValueError("direction must be -1, 0 or +1")
        if not math.isfinite(self.strength) or not math.isfinite(self.base_logit):
            raise ValueError("strength and base_logit must be finite")


@dataclass(frozen=True)
class RegimeSpec:
    name: str
    length_dist: tuple[int, int, int]
    action_mix: tuple[float, ...]
    error_prob: float = 0.0
    cascade_stickiness: float = 0.0
    repeat_prob: float = 0.0
    outcome_model: OutcomeModel = field(default_factory=OutcomeModel)
    error_types: tuple[str, ...] = tuple(ERROR_TEMPLATES)

    def __post_init__(self) -> None:
        mix = self.action_mix
        if isinstance(mix, Mapping):
            unknown = set(mix) - {c.value for c in CATEGORIES}
            if unknown:
                raise ValueError(f"unknown categories in action_mix: {sorted(unknown)}")
            mix = tuple(float(mix.get(c.value, 0.0)) for c in CATEGORIES)
        mix = tuple(float(x) for x in mix)
        object.__setattr__(self, "action_mix", mix)
        object.__setattr__(self, "length_dist", tuple(int(x) for x in self.length_dist))
        object.__setattr__(self, "error_types", tuple(self.error_types))
        if len(mix) != len(CATEGORIES):
            raise ValueError(f"action_mix needs {len(CATEGORIES)} probabilities")
        if min(mix) < 0 or abs(sum(mix) - 1.0) > 1e-9:
            raise ValueError("action_mix must be non-negative and sum to 1")
        lo, hi, mode = self.length_dist
        if not 1 <= lo <= mode <= hi:
            raise ValueError("length_dist needs 1 <= min <= mode <= max")
        for name in ("error_prob", "cascade_stickiness", "repeat_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        bad = [e for e in self.error_types if e not in ERROR_TEMPLATES]
        if bad or not self.error_types:
            raise ValueError(f"unknown or empty error_types: {bad}")

    @classmethod
    def from_json(cls, name: str, d: Mapping[str, Any]) -> "RegimeSpec":
        om = d.get("outcome_model", d.get("outcome", {})) or {}
        direction = om.get("direction", 1)
        if isinstance(direction, str):
            direction = {"lower": 1, "higher": -1, "none": 0}[direction]
        return cls(
            name=name,
            length_dist=tuple(d["length_dist"]),
            action_mix=d["action_mix"],
            error_prob=float(d.get("error_prob", 0.0)),
            cascade_stickiness=float(d.get("cascade_stickiness", 0.0)),
            repeat_prob=float(d.get("repeat_prob", 0.0)),
            outcome_model=OutcomeModel(om.get("feature", "length"), int(direction),
                                       float(om.get("strength", 0.0)), float(om.get("base_logit", 0.0))),
            error_types=tuple(d.get("error_types", ERROR_TEMPLATES)),
        )


def _draw_length(spec: RegimeSpec, rng: np.random.Generator) -> int:
    lo, hi, mode = spec.length_dist
    if lo == hi:
        return lo
    return int(min(hi, max(lo, round(rng.triangular(lo, mode, hi)))))


def _fill(template: str, nums) -> str:
    a, b, c = nums
    return template.format(a=a, b=b, c=c)


_CAT_VALUES = tuple(c.value for c in CATEGORIES)
_CAT_COMMANDS = tuple(_COMMANDS[c] for c in CATEGORIES)


def _draw_turns(spec: RegimeSpec, rng: np.random.Generator) -> tuple[list[Turn], dict[str, float]]:
    n = _draw_length(spec, rng)
    # all per-turn randomness drawn up front, one array per purpose
    u_repeat = rng.random(n)
    u_source = rng.random(n)
    cats = rng.choice(len(CATEGORIES), size=n, p=np.asarray(spec.action_mix)).tolist()
    pick = rng.integers(0, 1 << 30, size=(n, 2)).tolist()
    u_error = rng.random(n)
    nums = np.column_stack([rng.integers(1, 1_000_000, size=(n, 2)), rng.integers(1, 500, size=(n, 2)),
                            rng.integers(1, 128, size=(n, 2))]).tolist()
    types = spec.error_types

    turns: list[Turn] = []
    seen: set[str] = set()
    repeats = errors = explore = 0
    prev_error = False
    for i in range(n):
        if i and u_repeat[i] < spec.repeat_prob:
            src = turns[int(u_source[i] * i)]
            command, cat = src.action.command, src.thought
        else:
            options = _CAT_COMMANDS[cats[i]]
            command = _fill(options[pick[i][0] % len(options)], nums[i][0::2])
            cat = _CAT_VALUES[cats[i]]
        is_error = u_error[i] < (spec.cascade_stickiness if prev_error else spec.error_prob)
        if is_error:
            obs = Observation(_fill(ERROR_TEMPLATES[types[pick[i][1] % len(types)]], nums[i][1::2]), 1)
        else:
            obs = Observation(_fill(CLEAN_TEMPLATES[pick[i][1] % len(CLEAN_TEMPLATES)], nums[i][1::2]), 0)
        repeats += command in seen
        seen.add(command)
        errors += is_error
        explore += cat == ActionCategory.EXPLORATION.value
        prev_error = is_error
        # the thought carries the planted category; annotation never reads it
        turns.append(Turn(i + 1, Action.bash(command), obs, cat))
    truth = {"length": float(n), "error_rate": errors / n,
             "exploration_ratio": explore / n, "repetition_rate": repeats / n}
    return turns, truth


def outcome_probabilities(values: Sequence[float], om: OutcomeModel) -> np.ndarray:
    x = np.asarray(values, float)
    sd = x.std()
    z = (x - x.mean()) / sd if sd > 0 else np.zeros_like(x)
    return 1.0 / (1.0 + np.exp(-(om.base_logit - om.direction * om.strength * z)))


def generate(spec: RegimeSpec, n: int, config: ConfigurationId, seed: int, stream: int = 0) -> list[Trajectory]:
    """``n`` trajectories for one configuration; ``stream`` separates configurations."""
    if n < 1:
        raise ValueError("n must be >= 1")
    draws = []
    for i in range(n):
        rng = substream(seed, "synth", stream, i)
        u_outcome = rng.random()
        draws.append((u_outcome, *_draw_turns(spec, rng)))
    probs = outcome_probabilities([truth[spec.outcome_model.feature] for _, _, truth in draws], spec.outcome_model)
    out = []
    for i, ((u_outcome, turns, _), p) in enumerate(zip(draws, probs)):
        resolved = u_outcome < p
        out.append(Trajectory(
            id=f"{config.framework}__{config.llm}__{i:05d}",
            config=config,
            turns=tuple(turns),
            outcome=Outcome.RESOLVED if resolved else Outcome.FAILED,
        ))
    return out


def _generate_star(args):
    return generate(*args)


def generate_ecosystem(specs: Sequence[tuple[RegimeSpec, ConfigurationId, int]], seed: int,
                       jobs: int = 1) -> list[Trajectory]:
    """Concatenated corpus; configuration ``j`` uses sub-stream ``j``."""
    if len(specs) < 2:
        raise ValueError("an ecosystem needs at least two configurations")
    keys = [c.key for _, c, _ in specs]
    if len(set(keys)) != len(keys):
        raise ValueError("duplicate configuration in ecosystem")
    tasks = [(spec, n, config, seed, j) for j, (spec, config, n) in enumerate(specs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_generate_star, tasks))
    else:
        parts = [_generate_star(t) for t in tasks]
    return [t for part in parts for t in part]


def load_spec_file(path) -> list[tuple[RegimeSpec, ConfigurationId, int]]:
    """Read ``{"regimes": {name: {...}}, "configs": [{framework, llm, llm_family, regime, n}]}``."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return parse_spec(data)


def parse_spec(data: Mapping[str, Any]) -> list[tuple[RegimeSpec, ConfigurationId, int]]:
    try:
        regimes = {name: RegimeSpec.from_json(name, d) for name, d in data["regimes"].items()}
        out = []
        for c in data["configs"]:
            if c["regime"] not in regimes:
                raise ValueError(f"config {c['framework']}/{c['llm']} names unknown regime {c['regime']!r}")
            config = ConfigurationId(c["framework"], c["llm"], c.get("llm_family", c["llm"]),
                                     c.get("framework_version"))
            out.append((regimes[c["regime"]], config, int(c.get("n", 100))))
    except KeyError as exc:
        raise ValueError(f"synth spec missing key {exc.args[0]!r}") from None
    return out
