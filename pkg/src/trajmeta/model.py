"""Canonical data model shared by every stage of the pipeline.

A trajectory is an ordered list of turns, each holding an optional thought,
one action (a shell command or a structured tool call) and the environment's
observation.  Every trajectory belongs to exactly one ``<framework, llm>``
configuration and carries a binary outcome.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Mapping


class ActionKind(str, enum.Enum):
    BASH = "bash"
    TOOL_CALL = "tool_call"


class Outcome(str, enum.Enum):
    RESOLVED = "resolved"
    FAILED = "failed"


class ActionCategory(str, enum.Enum):
    EXPLORATION = "Exploration"
    MODIFICATION = "Modification"
    TEST = "Test"
    NAVIGATION = "Navigation"
    UTILITY = "Utility"
    UNKNOWN = "Unknown"

    @property
    def code(self) -> int:
        return CATEGORY_CODES[self]

    @classmethod
    def from_code(cls, code: int) -> "ActionCategory":
        return CATEGORIES[code]


CATEGORIES: tuple[ActionCategory, ...] = tuple(ActionCategory)
CATEGORY_CODES = {c: i for i, c in enumerate(CATEGORIES)}


def _freeze(mapping: Mapping[str, Any] | None) -> Mapping[str, Any] | None:
    if mapping is None:
        return None
    return MappingProxyType(dict(mapping))


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    command: str = ""
    tool_name: str | None = None
    arguments: Mapping[str, Any] | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.kind, ActionKind):
            object.__setattr__(self, "kind", ActionKind(self.kind))
        if self.arguments is not None:
            object.__setattr__(self, "arguments", _freeze(self.arguments))

    @classmethod
    def bash(cls, command: str) -> "Action":
        return cls(ActionKind.BASH, command=command)

    @classmethod
    def tool(cls, tool_name: str, arguments: Mapping[str, Any] | None = None) -> "Action":
        return cls(ActionKind.TOOL_CALL, tool_name=tool_name, arguments=arguments)

    @property
    def signature(self) -> str:
        """Exact action string used for verbatim-repeat detection."""
        if self.kind is ActionKind.BASH:
            return self.command
        args = json.dumps(dict(self.arguments), sort_keys=True) if self.arguments else ""
        return f"{self.tool_name}({args})"

    def to_json(self) -> dict[str, Any]:
        if self.kind is ActionKind.BASH:
            return {"kind": "bash", "command": self.command}
        return {
            "kind": "tool_call",
            "tool_name": self.tool_name,
            "arguments": dict(self.arguments) if self.arguments is not None else None,
        }


@dataclass(frozen=True)
class Observation:
    text: str = ""
    exit_code: int | None = None

    def to_json(self) -> dict[str, Any]:
        return {"text": self.text, "exit_code": self.exit_code}


@dataclass(frozen=True)
class Turn:
    index: int
    action: Action
    observation: Observation = field(default_factory=Observation)
    thought: str | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "turn": self.index,
            "thought": self.thought,
            "action": self.action.to_json(),
            "observation": self.observation.to_json(),
        }


@dataclass(frozen=True, order=True)
class ConfigurationId:
    framework: str
    llm: str
    llm_family: str = field(default="", compare=False)
    framework_version: str | None = field(default=None, compare=False)

    @property
    def key(self) -> tuple[str, str]:
        return (self.framework, self.llm)

    def __str__(self) -> str:
        return f"{self.framework}/{self.llm}"


@dataclass(frozen=True)
class Trajectory:
    id: str
    config: ConfigurationId
    turns: tuple[Turn, ...]
    outcome: Outcome

    def __post_init__(self) -> None:
        object.__setattr__(self, "turns", tuple(self.turns))
        if not isinstance(self.outcome, Outcome):
            object.__setattr__(self, "outcome", Outcome(self.outcome))

    def __len__(self) -> int:
        return len(self.turns)

    @property
    def resolved(self) -> bool:
        return self.outcome is Outcome.RESOLVED

    def header_json(self) -> dict[str, Any]:
        return {
            "trajectory_id": self.id,
            "framework": self.config.framework,
            "framework_version": self.config.framework_version,
            "llm": self.config.llm,
            "llm_family": self.config.llm_family,
            "outcome": self.outcome.value,
        }


def validate_trajectory(t: Trajectory) -> list[str]:
    """Return one description per violated invariant; empty when well-formed."""
    problems: list[str] = []
    if not t.turns:
        return ["empty trajectory"]
    expected = 1
    for turn in t.turns:
        if turn.index != expected:
            if turn.index <= expected - 1:
                problems.append(f"non-increasing index at turn {turn.index}")
            else:
                problems.append(f"non-contiguous index at turn {turn.index}")
        expected = turn.index + 1
        action = turn.action
        if action.kind is ActionKind.BASH and not action.command:
            problems.append(f"missing command at turn {turn.index}")
        if action.kind is ActionKind.TOOL_CALL and not action.tool_name:
            problems.append(f"missing tool_name at turn {turn.index}")
        code = turn.observation.exit_code
        if code is not None and (isinstance(code, bool) or not isinstance(code, int)):
            problems.append(f"non-integer exit_code at turn {turn.index}")
    return problems


def load_family_map(path) -> dict[str, str]:
    """Read an ``{llm: family}`` JSON mapping."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or not all(isinstance(v, str) for v in data.values()):
        raise ValueError(f"{path}: family map must be a JSON object of strings")
    return data
