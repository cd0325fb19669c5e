"""Canonical JSONL interchange format.

One trajectory is a header line followed by its turn lines::

    {"trajectory_id": ..., "framework": ..., "framework_version": ..., "llm": ...,
     "llm_family": ..., "outcome": "resolved" | "failed"}
    {"turn": 1, "thought": ..., "action": {...}, "observation": {...}}

Several trajectories may share one file.  Annotated files use the same layout
with extra keys (``category``/``error_type`` per turn, ``cascades`` per header)
which the plain parser ignores.
"""

from __future__ import annotations

import json
from typing import Any, Iterable, Iterator, TextIO

from ..model import (
    Action,
    ActionKind,
    ConfigurationId,
    Observation,
    Outcome,
    Trajectory,
    Turn,
)


class CanonicalFormatError(ValueError):
    """Raised for malformed lines or schema violations in canonical JSONL."""


def dumps(obj: dict[str, Any]) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(", ", ": "))


def _load_object(line: str) -> dict[str, Any]:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        offset = len(line[: exc.pos].encode("utf-8"))
        raise CanonicalFormatError(f"malformed JSON at byte {offset}: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise CanonicalFormatError("line is not a JSON object")
    return obj


def _require(obj: dict[str, Any], key: str, where: str = "") -> Any:
    if key not in obj or obj[key] is None:
        raise CanonicalFormatError(f"missing {key}{where}")
    return obj[key]


def _opt_str(value: Any, key: str) -> str | None:
    if value is None or isinstance(value, str):
        return value
    raise CanonicalFormatError(f"{key} must be a string or null")


def turn_from_json(obj: dict[str, Any]) -> Turn:
    index = _require(obj, "turn")
    if isinstance(index, bool) or not isinstance(index, int) or index < 1:
        raise CanonicalFormatError("turn must be an integer >= 1")
    where = f" at turn {index}"
    action_obj = obj.get("action")
    if not isinstance(action_obj, dict):
        raise CanonicalFormatError(f"missing action{where}")
    kind = action_obj.get("kind")
    if kind == ActionKind.BASH.value:
        command = _require(action_obj, "command", where)
        if not isinstance(command, str) or not command:
            raise CanonicalFormatError(f"missing command{where}")
        action = Action.bash(command)
    elif kind == ActionKind.TOOL_CALL.value:
        tool_name = _require(action_obj, "tool_name", where)
        if not isinstance(tool_name, str) or not tool_name:
            raise CanonicalFormatError(f"missing tool_name{where}")
        arguments = action_obj.get("arguments")
        if arguments is not None and not isinstance(arguments, dict):
            raise CanonicalFormatError(f"arguments must be an object or null{where}")
        action = Action.tool(tool_name, arguments)
    elif kind is None:
        raise CanonicalFormatError(f"missing kind{where}")
    else:
        raise CanonicalFormatError(f"unknown action kind {kind!r}{where}")

    obs_obj = obj.get("observation") or {}
    if not isinstance(obs_obj, dict):
        raise CanonicalFormatError(f"observation must be an object{where}")
    text = obs_obj.get("text") or ""
    if not isinstance(text, str):
        raise CanonicalFormatError(f"observation text must be a string{where}")
    exit_code = obs_obj.get("exit_code")
    if exit_code is not None and (isinstance(exit_code, bool) or not isinstance(exit_code, int)):
        raise CanonicalFormatError(f"exit_code must be an integer or null{where}")
    thought = _opt_str(obj.get("thought"), "thought")
    return Turn(index=index, thought=thought, action=action,
                observation=Observation(text=text, exit_code=exit_code))


def parse_canonical_line(line: str) -> Turn:
    """Parse one canonical turn line; unknown keys are ignored."""
    return turn_from_json(_load_object(line))


def header_from_json(obj: dict[str, Any], family_map: dict[str, str] | None = None) -> tuple[str, ConfigurationId, Outcome]:
    tid = _require(obj, "trajectory_id")
    framework = _require(obj, "framework")
    llm = _require(obj, "llm")
    for key, value in (("trajectory_id", tid), ("framework", framework), ("llm", llm)):
        if not isinstance(value, str) or not value:
            raise CanonicalFormatError(f"{key} must be a non-empty string")
    family = obj.get("llm_family") or ""
    if family_map is not None:
        family = family_map.get(llm, family)
    outcome = obj.get("outcome")
    if outcome not in (Outcome.RESOLVED.value, Outcome.FAILED.value):
        raise CanonicalFormatError(f"outcome must be 'resolved' or 'failed', got {outcome!r}")
    config = ConfigurationId(
        framework=framework,
        llm=llm,
        llm_family=str(family),
        framework_version=_opt_str(obj.get("framework_version"), "framework_version"),
    )
    return tid, config, Outcome(outcome)


def is_header(obj: dict[str, Any]) -> bool:
    return "trajectory_id" in obj


def iter_records(lines: Iterable[str]) -> Iterator[tuple[dict[str, Any], list[dict[str, Any]]]]:
    """Group raw JSON objects into ``(header, turn_objects)`` pairs."""
    header: dict[str, Any] | None = None
    turns: list[dict[str, Any]] = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = _load_object(line)
        except CanonicalFormatError as exc:
            raise CanonicalFormatError(f"line {lineno}: {exc}") from None
        if is_header(obj):
            if header is not None:
                yield header, turns
            header, turns = obj, []
        elif header is None:
            raise CanonicalFormatError(f"line {lineno}: turn line before any header")
        else:
            turns.append(obj)
    if header is not None:
        yield header, turns


def trajectory_from_records(header: dict[str, Any], turn_objs: list[dict[str, Any]],
                            family_map: dict[str, str] | None = None) -> Trajectory:
    tid, config, outcome = header_from_json(header, family_map)
    turns = []
    for obj in turn_objs:
        try:
            turns.append(turn_from_json(obj))
        except CanonicalFormatError as exc:
            raise CanonicalFormatError(f"trajectory {tid}: {exc}") from None
    return Trajectory(id=tid, config=config, turns=tuple(turns), outcome=outcome)


def read_trajectories(fh: TextIO, family_map: dict[str, str] | None = None) -> Iterator[Trajectory]:
    for header, turn_objs in iter_records(fh):
        yield trajectory_from_records(header, turn_objs, family_map)


def trajectory_lines(t: Trajectory) -> list[str]:
    return [dumps(t.header_json())] + [dumps(turn.to_json()) for turn in t.turns]


def write_trajectories(fh: TextIO, trajectories: Iterable[Trajectory]) -> int:
    n = 0
    for t in trajectories:
        for line in trajectory_lines(t):
            fh.write(line)
            fh.write("\n")
        n += 1
    return n
