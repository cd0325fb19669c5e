"""Fixture builders shared by the test modules."""

from __future__ import annotations

from trajmeta.annotate import AnnotatedTrajectory, segment_cascades
from trajmeta.model import (Action, ActionCategory, ConfigurationId, Observation, Outcome, Trajectory,
                            Turn)

LETTERS = {
    "E": ActionCategory.EXPLORATION,
    "M": ActionCategory.MODIFICATION,
    "T": ActionCategory.TEST,
    "N": ActionCategory.NAVIGATION,
    "U": ActionCategory.UTILITY,
    "X": ActionCategory.UNKNOWN,
}

CONFIG = ConfigurationId("fw", "model-a", "fam")

# criterion id -> "C<n> PASS|FAIL ..." line, printed in the terminal summary
ACCEPTANCE: dict[str, str] = {}


def record(cid: str, title: str, ok: bool, detail: str) -> None:
    line = f"{cid} {'PASS' if ok else 'FAIL'} {title}: {detail}"
    ACCEPTANCE[cid] = line
    print(line)


def trajectory(commands, outcome="resolved", config=CONFIG, tid="t1", observations=None) -> Trajectory:
    turns = []
    for i, cmd in enumerate(commands, start=1):
        action = cmd if isinstance(cmd, Action) else Action.bash(cmd)
        obs = observations[i - 1] if observations else Observation("ok", 0)
        turns.append(Turn(i, action, obs))
    return Trajectory(tid, config, tuple(turns), Outcome(outcome))


def annotated(cats: str, errors=(), actions=None, outcome="resolved", min_len=1,
              config=CONFIG, tid="t1") -> AnnotatedTrajectory:
    """Build an annotation directly from category letters.

    ``errors`` holds 1-based turn numbers; ``actions`` defaults to distinct
    commands so no turn is a verbatim repeat.
    """
    n = len(cats)
    commands = actions if actions is not None else [f"cmd_{i}" for i in range(n)]
    base = trajectory(commands, outcome, config, tid)
    err = tuple("traceback" if i + 1 in set(errors) else None for i in range(n))
    cascades = tuple(segment_cascades([e is not None for e in err], min_len))
    return AnnotatedTrajectory(base, tuple(LETTERS[c] for c in cats), err, cascades)
