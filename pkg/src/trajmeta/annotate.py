"""Action classification, error detection and cascade segmentation.

Rule sets are plain JSON data shipped in ``trajmeta/rules``; pass a directory
containing ``classifier.json`` and ``errors.json`` to use a different set.
"""

from __future__ import annotations

import hashlib
import json
import re
import shlex
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence, TextIO

from .ingest import canonical
from .model import Action, ActionCategory, ActionKind, Trajectory

NONZERO_EXIT = "nonzero_exit"

_ENV_ASSIGN = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*=")
_HEREDOC = re.compile(r"<<-?\s*['\"]?\w+")
_SHELL_QUOTING = re.compile(r"['\"\\#]")


class RuleError(ValueError):
    """Invalid rule file (bad category, duplicate error type, bad regex)."""


@dataclass(frozen=True)
class ClassifierRules:
    tool_signatures: dict[str, ActionCategory]
    bash_commands: dict[str, ActionCategory]
    version: str = "0"
    heredoc_category: ActionCategory | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "_bash_cache", {})

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "ClassifierRules":
        def cats(mapping: dict[str, str]) -> dict[str, ActionCategory]:
            try:
                return {k: ActionCategory(v) for k, v in mapping.items()}
            except ValueError as exc:
                raise RuleError(str(exc)) from None

        heredoc = data.get("heredoc_category")
        return cls(
            tool_signatures=cats(data.get("tool_signatures", {})),
            bash_commands={k.lower(): v for k, v in cats(data.get("bash_commands", {})).items()},
            version=str(data.get("version", "0")),
            heredoc_category=ActionCategory(heredoc) if heredoc else None,
        )


_LEADING_FLAGS = re.compile(r"^\(\?([aiLmsux]+)\)")


def _scoped(pattern: str) -> str:
    """Wrap a pattern so leading inline flags stay local inside an alternation."""
    m = _LEADING_FLAGS.match(pattern)
    if m:
        return f"(?{m.group(1)}:{pattern[m.end():]})"
    return f"(?:{pattern})"


@dataclass(frozen=True)
class ErrorRules:
    categories: tuple[tuple[str, tuple[re.Pattern, ...]], ...]
    version: str = "0"

    def __post_init__(self) -> None:
        names = [name for name, _ in self.categories]
        if len(set(names)) != len(names):
            raise RuleError("duplicate error type names")
        per_type = tuple((name, re.compile("|".join(_scoped(p.pattern) for p in pats)))
                         for name, pats in self.categories if pats)
        object.__setattr__(self, "_per_type", per_type)
        # one combined scan rejects clean observations before the ordered per-type search
        object.__setattr__(self, "_any", re.compile("|".join(p.pattern for _, p in per_type))
                           if per_type else None)

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "ErrorRules":
        cats = []
        for entry in data["categories"]:
            name, patterns = entry
            try:
                compiled = tuple(re.compile(p) for p in patterns)
            except re.error as exc:
                raise RuleError(f"error type {name!r}: invalid pattern: {exc}") from None
            cats.append((str(name), compiled))
        return cls(tuple(cats), version=str(data.get("version", "0")))

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.categories]

    def match(self, text: str) -> str | None:
        if not text or self._any is None or self._any.search(text) is None:
            return None
        for name, pat in self._per_type:
            if pat.search(text):
                return name
        return None


def _read_rule_file(rules_dir, name: str) -> tuple[dict[str, Any], bytes]:
    if rules_dir is None:
        raw = resources.files("trajmeta.rules").joinpath(name).read_bytes()
    else:
        raw = (Path(rules_dir) / name).read_bytes()
    return json.loads(raw), raw


def load_rules(rules_dir=None) -> tuple[ClassifierRules, ErrorRules, str]:
    """Load both rule files; also return a SHA-256 over their bytes."""
    cdata, craw = _read_rule_file(rules_dir, "classifier.json")
    edata, eraw = _read_rule_file(rules_dir, "errors.json")
    digest = hashlib.sha256(craw + b"\0" + eraw).hexdigest()
    return ClassifierRules.from_json(cdata), ErrorRules.from_json(edata), digest


def _command_word(tokens: Iterable[str]) -> str | None:
    for tok in tokens:
        if _ENV_ASSIGN.match(tok) or tok == "sudo":
            continue
        # pipelines and chains classify by their first stage
        tok = re.split(r"[|;&<>()]", tok, maxsplit=1)[0]
        if tok:
            return tok.rsplit("/", 1)[-1]
    return None


@lru_cache(maxsize=65536)
def first_command(command: str) -> str:
    """First command word after leading ``VAR=value`` assignments and ``sudo``."""
    # whitespace split agrees with shlex on every token before the first quote or escape
    plain = []
    for tok in command.split():
        if _SHELL_QUOTING.search(tok):
            break
        plain.append(tok)
    else:
        return _command_word(plain) or ""
    word = _command_word(plain)
    if word is not None:
        return word
    try:
        tokens = shlex.split(command, posix=True)
    except ValueError:
        tokens = command.split()
    return _command_word(tokens) or ""


def classify_action(action: Action, rules: ClassifierRules) -> ActionCategory:
    if action.kind is ActionKind.TOOL_CALL:
        sub = action.arguments.get("command") if action.arguments else None
        if isinstance(sub, str):
            hit = rules.tool_signatures.get(f"{action.tool_name}:{sub}")
            if hit is not None:
                return hit
        return rules.tool_signatures.get(action.tool_name or "", ActionCategory.UNKNOWN)
    cache = rules._bash_cache
    hit = cache.get(action.command)
    if hit is None:
        hit = _bash_category(action.command, rules)
        if len(cache) < 1 << 16:
            cache[action.command] = hit
    return hit


def _bash_category(command: str, rules: ClassifierRules) -> ActionCategory:
    if rules.heredoc_category is not None and "<<" in command and _HEREDOC.search(command) \
            and ">" in command.replace("<<", ""):
        return rules.heredoc_category
    return rules.bash_commands.get(first_command(command).lower(), ActionCategory.UNKNOWN)


def detect_errors(t: Trajectory, rules: ErrorRules) -> list[str | None]:
    out: list[str | None] = []
    for turn in t.turns:
        hit = rules.match(turn.observation.text)
        if hit is None and turn.observation.exit_code not in (None, 0):
            hit = NONZERO_EXIT
        out.append(hit)
    return out


def segment_cascades(flags: Sequence[bool], min_len: int = 1) -> list[tuple[int, int]]:
    """Maximal runs of true flags as 1-based ``(start, length)``, keeping runs >= min_len."""
    if min_len < 1:
        raise ValueError("min_len must be >= 1")
    runs = []
    start = None
    for i, flag in enumerate(flags, 1):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            if i - start >= min_len:
                runs.append((start, i - start))
            start = None
    if start is not None and len(flags) + 1 - start >= min_len:
        runs.append((start, len(flags) + 1 - start))
    return runs


@dataclass(frozen=True)
class AnnotatedTrajectory:
    base: Trajectory
    categories: tuple[ActionCategory, ...]
    error_types: tuple[str | None, ...]
    cascades: tuple[tuple[int, int], ...]

    @property
    def n(self) -> int:
        return len(self.base.turns)

    @property
    def error_flags(self) -> list[bool]:
        return [e is not None for e in self.error_types]


def annotate(t: Trajectory, crules: ClassifierRules, erules: ErrorRules,
             cascade_min_len: int = 1) -> AnnotatedTrajectory:
    cats = tuple(classify_action(turn.action, crules) for turn in t.turns)
    errs = tuple(detect_errors(t, erules))
    cascades = tuple(segment_cascades([e is not None for e in errs], cascade_min_len))
    return AnnotatedTrajectory(t, cats, errs, cascades)


def annotated_lines(a: AnnotatedTrajectory) -> list[str]:
    header = a.base.header_json()
    header["cascades"] = [list(c) for c in a.cascades]
    lines = [canonical.dumps(header)]
    for turn, cat, err in zip(a.base.turns, a.categories, a.error_types):
        obj = turn.to_json()
        obj["category"] = cat.value
        obj["error_type"] = err
        lines.append(canonical.dumps(obj))
    return lines


def write_annotated(fh: TextIO, items: Iterable[AnnotatedTrajectory]) -> int:
    n = 0
    for a in items:
        for line in annotated_lines(a):
            fh.write(line)
            fh.write("\n")
        n += 1
    return n


def read_annotated(fh: TextIO) -> Iterator[AnnotatedTrajectory]:
    for header, turn_objs in canonical.iter_records(fh):
        t = canonical.trajectory_from_records(header, turn_objs)
        try:
            cats = tuple(ActionCategory(obj["category"]) for obj in turn_objs)
            errs = tuple(obj.get("error_type") for obj in turn_objs)
            cascades = tuple((int(s), int(n)) for s, n in header["cascades"])
        except (KeyError, ValueError, TypeError) as exc:
            raise canonical.CanonicalFormatError(f"trajectory {t.id}: not an annotated record ({exc})") from None
        yield AnnotatedTrajectory(t, cats, errs, cascades)
