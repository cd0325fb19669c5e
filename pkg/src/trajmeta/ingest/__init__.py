"""Directory ingestion: detect each file's format, parse, validate, report."""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..model import Trajectory
from .adapters import DEFAULT_ADAPTERS, FormatAdapter, get_adapters
from .canonical import (
    CanonicalFormatError,
    parse_canonical_line,
    read_trajectories,
    write_trajectories,
)

__all__ = [
    "CanonicalFormatError",
    "DEFAULT_ADAPTERS",
    "FormatAdapter",
    "IngestReport",
    "get_adapters",
    "ingest_path",
    "parse_canonical_line",
    "read_trajectories",
    "write_trajectories",
]


@dataclass
class IngestReport:
    files_seen: int = 0
    trajectories_parsed: int = 0
    trajectories_rejected: int = 0
    rejection_reasons: list[tuple[str, str]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "files_seen": self.files_seen,
            "trajectories_parsed": self.trajectories_parsed,
            "trajectories_rejected": self.trajectories_rejected,
            "rejection_reasons": [list(r) for r in self.rejection_reasons],
        }


def _parse_file(path: str, adapter_names: tuple[str, ...]) -> tuple[list[Trajectory], list[str]]:
    adapters = get_adapters(list(adapter_names))
    raw = Path(path).read_bytes()
    matches = [a for a in adapters if a.detect(raw)]
    if not matches:
        return [], ["no format match"]
    if len(matches) > 1:
        return [], ["ambiguous format: " + ", ".join(a.name for a in matches)]
    errors: list[str] = []
    try:
        parsed = matches[0].parse(raw, errors.append)
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        return [], [f"{matches[0].name}: {exc}"]
    return parsed, errors


def _family_fixup(t: Trajectory, family_map: dict[str, str] | None) -> Trajectory:
    if not family_map or t.config.llm not in family_map:
        return t
    return replace(t, config=replace(t.config, llm_family=family_map[t.config.llm]))


def ingest_path(root, adapters: list[FormatAdapter] | list[str] | None = None, *,
                family_map: dict[str, str] | None = None,
                jobs: int = 1) -> tuple[list[Trajectory], IngestReport]:
    """Parse every regular file below ``root`` in lexicographic path order."""
    root = Path(root)
    if not root.is_dir() or not os.access(root, os.R_OK | os.X_OK):
        raise OSError(f"cannot read input directory: {root}")
    names = tuple(a if isinstance(a, str) else a.name for a in (adapters or DEFAULT_ADAPTERS.values()))
    files = sorted(str(p) for p in root.rglob("*") if p.is_file() and not p.name.startswith("."))
    report = IngestReport(files_seen=len(files))

    if jobs > 1 and len(files) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_parse_file, files, [names] * len(files)))
    else:
        results = [_parse_file(f, names) for f in files]

    out: list[Trajectory] = []
    seen: set[str] = set()
    for path, (parsed, errors) in zip(files, results):
        rel = os.path.relpath(path, root)
        for reason in errors:
            report.rejection_reasons.append((rel, reason))
            report.trajectories_rejected += 1
        for t in parsed:
            if t.id in seen:
                report.rejection_reasons.append((rel, f"trajectory {t.id}: duplicate trajectory id"))
                report.trajectories_rejected += 1
                continue
            seen.add(t.id)
            out.append(_family_fixup(t, family_map))
            report.trajectories_parsed += 1
    return out, report


def write_report(report: IngestReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
