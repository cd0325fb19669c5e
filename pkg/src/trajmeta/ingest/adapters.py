"""Format adapters turning raw log files into canonical trajectories.

Each adapter exposes ``name``, ``detect(raw) -> bool`` and
``parse(raw, on_error) -> list[Trajectory]``.  ``detect`` must be cheap and
mutually exclusive with every other registered adapter.  ``parse`` raises for
file-level failures and reports per-trajectory failures through ``on_error``
so that one bad trajectory does not sink the rest of its file.

Adapters are stateless; the registry below holds one instance of each.
"""

from __future__ import annotations

import json
import re
from typing import Any, Callable, Protocol

from ..model import Action, ConfigurationId, Observation, Outcome, Trajectory, Turn, validate_trajectory
from . import canonical

ErrorSink = Callable[[str], None]


class FormatAdapter(Protocol):
    name: str

    def detect(self, raw: bytes) -> bool: ...

    def parse(self, raw: bytes, on_error: ErrorSink) -> list[Trajectory]: ...


def _first_line(raw: bytes) -> bytes:
    for line in raw.splitlines():
        if line.strip():
            return line.strip()
    return b""


def _checked(t: Trajectory, on_error: ErrorSink) -> Trajectory | None:
    problems = validate_trajectory(t)
    if problems:
        on_error(f"trajectory {t.id}: " + "; ".join(problems))
        return None
    return t


class CanonicalAdapter:
    name = "canonical"

    def detect(self, raw: bytes) -> bool:
        line = _first_line(raw)
        if not line.startswith(b"{"):
            return False
        try:
            obj = json.loads(line)
        except ValueError:
            return False
        return isinstance(obj, dict) and "trajectory_id" in obj

    def parse(self, raw: bytes, on_error: ErrorSink) -> list[Trajectory]:
        text = raw.decode("utf-8")
        out = []
        for header, turn_objs in canonical.iter_records(text.splitlines()):
            try:
                t = canonical.trajectory_from_records(header, turn_objs)
            except canonical.CanonicalFormatError as exc:
                reason = str(exc)
                if not reason.startswith("trajectory "):
                    reason = f"trajectory {header.get('trajectory_id')}: {reason}"
                on_error(reason)
                continue
            t = _checked(t, on_error)
            if t is not None:
                out.append(t)
        return out


class ReactLogAdapter:
    """Plain-text ReAct logs with THOUGHT/ACTION/OBSERVATION markers.

    Layout::

        === TRAJECTORY id=django-1 framework=toy llm=gpt-4o llm_family=gpt outcome=resolved
        THOUGHT: look around
        ACTION: ls -la
        OBSERVATION:
        setup.py  src/
        EXIT_CODE: 0

    ``ACTION[tool_name]: {json arguments}`` records a structured tool call.
    Marker blocks may span several lines; each ACTION opens a new turn.
    """

    name = "react"
    HEADER = b"=== TRAJECTORY"
    _marker = re.compile(r"^(THOUGHT|ACTION(?:\[(?P<tool>[^\]]+)\])?|OBSERVATION|EXIT_CODE):\s?(?P<rest>.*)$")
    _field = re.compile(r"(\w+)=(\S+)")

    def detect(self, raw: bytes) -> bool:
        return _first_line(raw).startswith(self.HEADER)

    def parse(self, raw: bytes, on_error: ErrorSink) -> list[Trajectory]:
        text = raw.decode("utf-8")
        blocks = re.split(r"^=== TRAJECTORY", text, flags=re.M)
        out = []
        for block in blocks[1:]:
            try:
                t = self._parse_block(block)
            except ValueError as exc:
                on_error(str(exc))
                continue
            t = _checked(t, on_error)
            if t is not None:
                out.append(t)
        return out

    def _parse_block(self, block: str) -> Trajectory:
        header, _, body = block.partition("\n")
        fields = dict(self._field.findall(header))
        tid = fields.get("id")
        if not tid:
            raise ValueError("react header without id")
        outcome = fields.get("outcome")
        if outcome not in (Outcome.RESOLVED.value, Outcome.FAILED.value):
            raise ValueError(f"trajectory {tid}: outcome must be 'resolved' or 'failed', got {outcome!r}")
        if "framework" not in fields or "llm" not in fields:
            raise ValueError(f"trajectory {tid}: header needs framework= and llm=")
        config = ConfigurationId(fields["framework"], fields["llm"], fields.get("llm_family", ""),
                                 fields.get("framework_version"))

        turns: list[dict[str, Any]] = []
        current: dict[str, Any] | None = None
        thought: list[str] | None = None
        section: str | None = None
        for line in body.splitlines():
            m = self._marker.match(line)
            if m is None:
                if section == "THOUGHT" and thought is not None:
                    thought.append(line)
                elif section is not None and current is not None:
                    current[section].append(line)
                continue
            tag, rest = m.group(1), m.group("rest")
            if tag == "THOUGHT" or tag.startswith("ACTION"):
                if current is not None:
                    turns.append(current)
                    current = None
            if tag == "THOUGHT":
                thought = [rest]
                section = "THOUGHT"
            elif tag.startswith("ACTION"):
                current = {"THOUGHT": thought or [], "ACTION": [rest], "OBSERVATION": [],
                           "EXIT_CODE": [], "tool": m.group("tool")}
                thought = None
                section = "ACTION"
            elif current is None:
                raise ValueError(f"trajectory {tid}: {tag} before any ACTION")
            else:
                current[tag].append(rest)
                section = tag
        if current is not None:
            turns.append(current)
        if not turns:
            raise ValueError(f"trajectory {tid}: no turns")
        return Trajectory(tid, config, tuple(self._turn(tid, i, raw) for i, raw in enumerate(turns, 1)),
                          Outcome(outcome))

    @staticmethod
    def _turn(tid: str, index: int, raw: dict[str, Any]) -> Turn:
        action_text = "\n".join(raw["ACTION"]).strip()
        if raw["tool"]:
            args = None
            if action_text:
                try:
                    args = json.loads(action_text)
                except ValueError:
                    raise ValueError(f"trajectory {tid}: bad tool arguments at turn {index}") from None
                if not isinstance(args, dict):
                    raise ValueError(f"trajectory {tid}: tool arguments must be an object at turn {index}")
            action = Action.tool(raw["tool"], args)
        else:
            if not action_text:
                raise ValueError(f"trajectory {tid}: missing command at turn {index}")
            action = Action.bash(action_text)
        exit_code = None
        code_text = "".join(raw["EXIT_CODE"]).strip()
        if code_text:
            try:
                exit_code = int(code_text)
            except ValueError:
                raise ValueError(f"trajectory {tid}: bad EXIT_CODE at turn {index}") from None
        thought = "\n".join(raw["THOUGHT"]).strip() or None
        obs = "\n".join(raw["OBSERVATION"]).strip("\n")
        return Turn(index, action, Observation(obs, exit_code), thought)


class NestedTranscriptAdapter:
    """Chat-style JSON transcripts with function calls.

    Expects one JSON document::

        {"metadata": {"trajectory_id", "framework", "llm", "llm_family", "outcome", ...},
         "messages": [{"role": "assistant", "content": "...",
                       "tool_calls": [{"id": "c1", "function": {"name": "bash",
                                        "arguments": "{\\"command\\": \\"ls\\"}"}}]},
                      {"role": "tool", "tool_call_id": "c1", "content": "...", "exit_code": 0}]}

    Each tool call is one turn; the assistant content becomes the thought of
    its first call.  Calls to ``bash``-like tools with a ``command`` argument
    are recorded as shell actions.
    """

    name = "nested_json"
    SHELL_TOOLS = frozenset({"bash", "shell", "execute_bash", "run_command", "terminal"})

    def detect(self, raw: bytes) -> bool:
        head = raw.lstrip()[:1]
        if head != b"{":
            return False
        try:
            doc = json.loads(raw)
        except ValueError:
            return False
        return isinstance(doc, dict) and "messages" in doc and "metadata" in doc

    def parse(self, raw: bytes, on_error: ErrorSink) -> list[Trajectory]:
        doc = json.loads(raw)
        docs = doc if isinstance(doc, list) else [doc]
        out = []
        for d in docs:
            try:
                t = self._parse_doc(d)
            except (ValueError, KeyError, TypeError) as exc:
                on_error(str(exc))
                continue
            t = _checked(t, on_error)
            if t is not None:
                out.append(t)
        return out

    def _parse_doc(self, doc: dict[str, Any]) -> Trajectory:
        meta = dict(doc["metadata"])
        tid, config, outcome = canonical.header_from_json(meta)
        results: dict[str, dict[str, Any]] = {}
        for msg in doc["messages"]:
            if msg.get("role") == "tool" and msg.get("tool_call_id") is not None:
                results[msg["tool_call_id"]] = msg

        turns: list[Turn] = []
        for msg in doc["messages"]:
            if msg.get("role") != "assistant":
                continue
            thought = msg.get("content") or None
            for call in msg.get("tool_calls") or []:
                fn = call.get("function") or {}
                name = fn.get("name")
                if not name:
                    raise ValueError(f"trajectory {tid}: missing tool_name at turn {len(turns) + 1}")
                args = fn.get("arguments")
                if isinstance(args, str):
                    args = json.loads(args) if args.strip() else None
                if args is not None and not isinstance(args, dict):
                    raise ValueError(f"trajectory {tid}: arguments must be an object at turn {len(turns) + 1}")
                if name in self.SHELL_TOOLS and args and isinstance(args.get("command"), str):
                    action = Action.bash(args["command"])
                else:
                    action = Action.tool(name, args)
                res = results.get(call.get("id"), {})
                content = res.get("content") or ""
                if isinstance(content, list):
                    content = "\n".join(str(part.get("text", "")) if isinstance(part, dict) else str(part)
                                        for part in content)
                code = res.get("exit_code")
                obs = Observation(str(content), code if isinstance(code, int) and not isinstance(code, bool) else None)
                turns.append(Turn(len(turns) + 1, action, obs, thought))
                thought = None
        return Trajectory(tid, config, tuple(turns), outcome)


DEFAULT_ADAPTERS: dict[str, FormatAdapter] = {
    a.name: a for a in (CanonicalAdapter(), ReactLogAdapter(), NestedTranscriptAdapter())
}


def get_adapters(names: list[str] | None = None) -> list[FormatAdapter]:
    if not names:
        return list(DEFAULT_ADAPTERS.values())
    unknown = [n for n in names if n not in DEFAULT_ADAPTERS]
    if unknown:
        raise KeyError(f"unknown adapter(s): {', '.join(unknown)}")
    return [DEFAULT_ADAPTERS[n] for n in names]
