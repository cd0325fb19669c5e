"""CSV/JSON readers and writers for stage outputs.

Floats are written with ``repr`` (shortest round-trip form), absent values
as empty cells, booleans as ``true``/``false``; rows end with ``\\n``.
"""

from __future__ import annotations

import csv
import json
import math
from typing import Any, Iterable, Mapping, Sequence

from .effects import EffectEstimate, Skip, TrajectoryRecord
from .meta import MetaResult, ModeratorFit
from .model import ConfigurationId, Outcome


class SchemaError(ValueError):
    """A table lacks the columns a stage needs."""


def fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float) or hasattr(value, "dtype"):
        x = float(value)
        return "" if math.isnan(x) else repr(x)
    return str(value)


def parse_float(cell: str | None) -> float | None:
    if cell is None or cell == "":
        return None
    return float(cell)


def parse_bool(cell: str | None) -> bool | None:
    if cell is None or cell == "":
        return None
    if cell in ("true", "1", "True"):
        return True
    if cell in ("false", "0", "False"):
        return False
    raise ValueError(f"not a boolean: {cell!r}")


def write_csv(fh, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> int:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    n = 0
    for row in rows:
        w.writerow([fmt(v) for v in row])
        n += 1
    return n


def read_csv(path, required: Sequence[str] = ()) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        missing = [c for c in required if c not in cols]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        return list(reader)


def dump_json(fh, obj: Any) -> None:
    json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False, default=_json_default)
    fh.write("\n")


def _json_default(o: Any):
    if hasattr(o, "tolist"):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def clean_json(obj: Any) -> Any:
    """Replace NaN/inf floats with None so output is strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean_json(v) for v in obj]
    return obj


CONFIG_COLS = ("framework", "llm", "llm_family")


def config_cells(c: ConfigurationId) -> list[str]:
    return [c.framework, c.llm, c.llm_family]


def config_from_row(row: Mapping[str, str]) -> ConfigurationId:
    return ConfigurationId(row["framework"], row["llm"], row.get("llm_family") or row["llm"])


# per-trajectory tables ---------------------------------------------------

TRAJ_KEY_COLS = (*CONFIG_COLS, "trajectory_id", "outcome", "n_turns")


def read_trajectory_table(path, value_cols: Sequence[str] | None = None) -> tuple[list[dict], list[str]]:
    rows = read_csv(path, TRAJ_KEY_COLS)
    if not rows:
        return [], list(value_cols or [])
    cols = list(value_cols) if value_cols is not None else [c for c in rows[0] if c not in TRAJ_KEY_COLS]
    return rows, cols


def records_from_tables(feature_rows: Sequence[Mapping[str, str]], feature_cols: Sequence[str],
                        pattern_rows: Sequence[Mapping[str, str]] = (),
                        pattern_cols: Sequence[str] = (),
                        length_feature: str | None = "mean_turns") -> list[TrajectoryRecord]:
    """Join per-trajectory tables on trajectory_id; the first table fixes the order."""
    pats = {r["trajectory_id"]: r for r in pattern_rows}
    out = []
    for r in feature_rows:
        values = {c: parse_float(r[c]) for c in feature_cols}
        if length_feature:
            values[length_feature] = float(r["n_turns"])
        p = pats.get(r["trajectory_id"])
        patterns = {c: parse_bool(p[c]) for c in pattern_cols} if p is not None else {}
        out.append(TrajectoryRecord(config_from_row(r), r["trajectory_id"],
                                    r["outcome"] == Outcome.RESOLVED.value, values, patterns))
    return out


def merge_trajectory_tables(base: Sequence[Mapping[str, str]], extra: Sequence[Mapping[str, str]],
                            extra_cols: Sequence[str]) -> list[dict[str, str]]:
    by_id = {r["trajectory_id"]: r for r in extra}
    out = []
    for r in base:
        e = by_id.get(r["trajectory_id"])
        if e is None:
            raise SchemaError(f"trajectory {r['trajectory_id']} missing from joined table")
        out.append({**r, **{c: e[c] for c in extra_cols}})
    return out


# effects -------------------------------------------------------------------

EFFECT_COLS = (*CONFIG_COLS, "feature", "kind", "effect", "variance", "n_resolved", "n_unresolved")
SKIP_COLS = ("feature", *CONFIG_COLS, "reason")


def write_effects(fh, effects: Sequence[EffectEstimate]) -> int:
    return write_csv(fh, EFFECT_COLS, ([*config_cells(e.config), e.feature, e.kind, e.effect, e.variance,
                                         e.n_resolved, e.n_unresolved] for e in effects))


def write_skips(fh, skips: Sequence[Skip]) -> int:
    return write_csv(fh, SKIP_COLS, ([s.feature, *config_cells(s.config), s.reason] for s in skips))


def read_effects(path) -> list[EffectEstimate]:
    rows = read_csv(path, EFFECT_COLS)
    return [EffectEstimate(config_from_row(r), r["feature"], float(r["effect"]), float(r["variance"]),
                           int(r["n_resolved"]), int(r["n_unresolved"]), r["kind"]) for r in rows]


# meta ----------------------------------------------------------------------

META_COLS = ("feature", "K", "pooled_effect", "pooled_effect_fe", "Q", "tau2", "i2", "classification",
             "n_pos", "n_neg", "n_zero")
FIT_COLS = ("feature", "moderator", "levels", "K", "tau2_null", "tau2_residual", "r2", "singleton_levels")


def write_meta(fh, results: Sequence[MetaResult]) -> int:
    return write_csv(fh, META_COLS, ([getattr(m, c) for c in META_COLS] for m in results))


def read_meta(path) -> list[dict[str, str]]:
    return read_csv(path, META_COLS)


def write_fits(fh, fits: Sequence[ModeratorFit]) -> int:
    return write_csv(fh, FIT_COLS, ([f.feature, f.moderator, f.levels, f.K, f.tau2_null, f.tau2_residual,
                                     f.r2, ";".join(f.singleton_levels)] for f in fits))


def read_fits(path) -> list[dict[str, str]]:
    return read_csv(path, FIT_COLS)
