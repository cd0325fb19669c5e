"""Stage functions, the end-to-end runner and the report builder.

Every stage writes to ``<name>.partial`` and renames on success, so a failed
stage leaves its partial output behind and never a truncated final file.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np
import scipy

from . import __version__, kernels
from .annotate import AnnotatedTrajectory, annotate, load_rules, read_annotated, write_annotated
from .cfg import CFG_FEATURE_NAMES, export_dot, trajectory_cfg_features
from .effects import FilterPolicy, per_config_effects
from .features import FEATURE_NAMES, ConfigFeatureSummary, config_summary, trajectory_features
from .ingest import ingest_path, read_trajectories, write_report, write_trajectories
from .meta import MODERATORS, group_by_feature, meta_regress, pool
from .model import load_family_map
from .patterns import PATTERN_NAMES, ThresholdManifest, compute_thresholds, detect_patterns
from .robustness import robustness_report
from .synth import generate_ecosystem, load_spec_file
from .tables import (CONFIG_COLS, SchemaError, TRAJ_KEY_COLS, clean_json, config_cells, config_from_row,
                     dump_json, fmt, merge_trajectory_tables, parse_float, read_csv, read_effects,
                     read_fits, read_meta, read_trajectory_table, records_from_tables, write_csv,
                     write_effects, write_fits, write_meta, write_skips)
from .taxonomy import TaxonomyModel, assign_type, fit_taxonomy, sweep

log = logging.getLogger(__name__)

LENGTH_FEATURE = "mean_turns"
EFFECT_FEATURES = tuple(n for n in FEATURE_NAMES if n != "trajectory_length_log")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def staged(path, mode: str = "w"):
    """Open ``path.partial``; rename onto ``path`` only if the block succeeds."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".partial")
    with open(tmp, mode, encoding="utf-8", newline="") as fh:
        yield fh
    os.replace(tmp, path)


def _pmap(fn: Callable, items: Sequence, jobs: int, chunksize: int = 64) -> list:
    if jobs > 1 and len(items) > chunksize:
        with ProcessPoolExecutor(max_workers=jobs) as pool_:
            return list(pool_.map(fn, items, chunksize=chunksize))
    return [fn(x) for x in items]


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# stages --------------------------------------------------------------------

def stage_synth(spec_path, out_path, seed: int, jobs: int = 1) -> int:
    specs = load_spec_file(spec_path)
    corpus = generate_ecosystem(specs, seed, jobs=jobs)
    with staged(out_path) as fh:
        return write_trajectories(fh, corpus)


def stage_ingest(input_dir, out_path, report_path, adapters: Sequence[str] | None = None,
                 family_map_path=None, jobs: int = 1) -> dict:
    family_map = load_family_map(family_map_path) if family_map_path else None
    trajs, report = ingest_path(input_dir, list(adapters) if adapters else None,
                                family_map=family_map, jobs=jobs)
    with staged(out_path) as fh:
        write_trajectories(fh, trajs)
    _remember(("raw", *_file_key(out_path)), trajs)
    with staged(report_path) as fh:
        dump_json(fh, report.to_json())
    return report.to_json()


def _annotate_one(t, crules, erules, min_len):
    return annotate(t, crules, erules, min_len)


def _file_key(path) -> tuple[str, int, int]:
    st = os.stat(path)
    return str(Path(path).resolve()), st.st_mtime_ns, st.st_size


# parsed corpora keyed on (path, mtime, size), so a rewritten file is re-read
_CACHE: dict[tuple, tuple] = {}
_CACHE_MAX = 4


def _remember(key: tuple, items) -> tuple:
    items = tuple(items)
    if len(_CACHE) >= _CACHE_MAX:
        _CACHE.pop(next(iter(_CACHE)))
    _CACHE[key] = items
    return items


def load_corpus(path) -> list:
    key = ("raw", *_file_key(path))
    if key not in _CACHE:
        with open(path, encoding="utf-8") as fh:
            _remember(key, read_trajectories(fh))
    return list(_CACHE[key])


def load_annotated(path) -> list[AnnotatedTrajectory]:
    key = ("annotated", *_file_key(path))
    if key not in _CACHE:
        with open(path, encoding="utf-8") as fh:
            _remember(key, read_annotated(fh))
    return list(_CACHE[key])


def stage_annotate(in_path, out_path, rules_dir=None, cascade_min_len: int = 1, jobs: int = 1) -> str:
    crules, erules, digest = load_rules(rules_dir)
    trajs = load_corpus(in_path)
    annotated = _pmap(partial(_annotate_one, crules=crules, erules=erules, min_len=cascade_min_len),
                      trajs, jobs)
    with staged(out_path) as fh:
        write_annotated(fh, annotated)
    _remember(("annotated", *_file_key(out_path)), annotated)
    return digest


def _traj_features_row(a: AnnotatedTrajectory) -> list:
    f = trajectory_features(a)
    return [*config_cells(a.base.config), a.base.id, a.base.outcome.value, a.n,
            *(getattr(f, n) for n in FEATURE_NAMES)]


def _cfg_row(a: AnnotatedTrajectory) -> list:
    c = trajectory_cfg_features(a)
    return [*config_cells(a.base.config), a.base.id, a.base.outcome.value, a.n,
            *(getattr(c, n) for n in CFG_FEATURE_NAMES)]


CONFIG_FEATURE_COLS = (*CONFIG_COLS, *FEATURE_NAMES, "mean_turns")


def _group_by_config(items: Iterable[AnnotatedTrajectory]) -> dict[tuple[str, str], list[AnnotatedTrajectory]]:
    out: dict[tuple[str, str], list[AnnotatedTrajectory]] = {}
    for a in items:
        out.setdefault(a.base.config.key, []).append(a)
    return dict(sorted(out.items()))


def stage_features(annotated_path, traj_csv, config_csv, jobs: int = 1) -> int:
    """Per-trajectory table plus the per-configuration median summary."""
    annotated = load_annotated(annotated_path)
    rows = _pmap(_traj_features_row, annotated, jobs)
    with staged(traj_csv) as fh:
        write_csv(fh, (*TRAJ_KEY_COLS, *FEATURE_NAMES), rows)
    summaries = [config_summary(group) for group in _group_by_config(annotated).values()]
    with staged(config_csv) as fh:
        write_csv(fh, CONFIG_FEATURE_COLS,
                  ([*config_cells(s.config), *(s.features[n] for n in FEATURE_NAMES), s.mean_turns]
                   for s in summaries))
    return len(rows)


def stage_cfg(annotated_path, cfg_csv, dot_dir=None, jobs: int = 1) -> int:
    annotated = load_annotated(annotated_path)
    rows = _pmap(_cfg_row, annotated, jobs)
    with staged(cfg_csv) as fh:
        write_csv(fh, (*TRAJ_KEY_COLS, *CFG_FEATURE_NAMES), rows)
    if dot_dir:
        for a in annotated:
            export_dot(a, dot_dir)
    return len(rows)


def stage_calibrate(annotated_path, thresholds_path, source: str = "") -> ThresholdManifest:
    m = compute_thresholds(load_annotated(annotated_path), source or Path(annotated_path).name)
    with staged(thresholds_path) as fh:
        dump_json(fh, m.to_json())
    return m


def load_thresholds(path) -> ThresholdManifest:
    if not Path(path).is_file():
        raise FileNotFoundError(f"threshold manifest not found: {path} "
                                "(create it with `patterns calibrate` or pass --calibrate)")
    return ThresholdManifest.load(path)


def _pattern_row(a: AnnotatedTrajectory, m: ThresholdManifest) -> list:
    p = detect_patterns(a, None, m)
    return [*config_cells(a.base.config), a.base.id, a.base.outcome.value, a.n,
            *(getattr(p, n) for n in PATTERN_NAMES)]


def stage_patterns(annotated_path, thresholds_path, patterns_csv, jobs: int = 1) -> str:
    m = load_thresholds(thresholds_path)
    annotated = load_annotated(annotated_path)
    rows = _pmap(partial(_pattern_row, m=m), annotated, jobs)
    with staged(patterns_csv) as fh:
        write_csv(fh, (*TRAJ_KEY_COLS, *PATTERN_NAMES), rows)
    return m.digest()


def stage_effects(features_csv, effects_csv, skips_csv, *, cfg_csv=None, patterns_csv=None,
                  policy: FilterPolicy = FilterPolicy(), variance: str = "normal", seed: int = 0) -> int:
    rows, cols = read_trajectory_table(features_csv, EFFECT_FEATURES)
    cols = list(cols)
    if cfg_csv:
        cfg_rows, cfg_cols = read_trajectory_table(cfg_csv, CFG_FEATURE_NAMES)
        rows = merge_trajectory_tables(rows, cfg_rows, cfg_cols)
        cols += list(cfg_cols)
    pat_rows: list = []
    pat_cols: Sequence[str] = ()
    if patterns_csv:
        pat_rows, pat_cols = read_trajectory_table(patterns_csv, PATTERN_NAMES)
    records = records_from_tables(rows, cols, pat_rows, pat_cols, LENGTH_FEATURE)
    effects, skips = per_config_effects(records, [LENGTH_FEATURE, *cols], list(pat_cols), policy,
                                        variance=variance, seed=seed)
    with staged(effects_csv) as fh:
        write_effects(fh, effects)
    with staged(skips_csv) as fh:
        write_skips(fh, skips)
    return len(effects)


def stage_meta(effects_csv, meta_csv, fits_csv=None, zero_band: float = 0.0,
               moderators: Sequence[str] = MODERATORS) -> tuple[list, list]:
    groups = group_by_feature(read_effects(effects_csv))
    results, fits = [], []
    for feature in sorted(groups):
        effects = groups[feature]
        if len(effects) < 2:
            log.warning("meta: %s has K=%d; not pooled", feature, len(effects))
            continue
        results.append(pool(effects, zero_band))
        for mod in moderators:
            try:
                fits.append(meta_regress(effects, mod))
            except ValueError as exc:
                log.info("meta regress %s/%s skipped: %s", feature, mod, exc)
    with staged(meta_csv) as fh:
        write_meta(fh, results)
    if fits_csv:
        with staged(fits_csv) as fh:
            write_fits(fh, fits)
    return results, fits


def _robust_task(task, n_boot: int, n_perm: int, seed: int):
    effects, moderator = task
    try:
        return robustness_report(effects, moderator, n_boot=n_boot, n_perm=n_perm, seed=seed).to_json()
    except ValueError as exc:
        return {"feature": effects[0].feature, "moderator": moderator, "error": str(exc)}


def stage_robust(effects_csv, robust_json, *, moderators: Sequence[str] = MODERATORS,
                 features: Sequence[str] | None = None, n_boot: int = 2000, n_perm: int = 2000,
                 seed: int = 0, jobs: int = 1, single: bool = False) -> list[dict]:
    groups = group_by_feature(read_effects(effects_csv))
    if features:
        unknown = [f for f in features if f not in groups]
        if unknown:
            raise ValueError(f"no effects for feature(s): {', '.join(unknown)}")
        names = list(features)
    else:
        names = sorted(groups)
    tasks = [(groups[f], mod) for f in names for mod in moderators]
    fn = partial(_robust_task, n_boot=n_boot, n_perm=n_perm, seed=seed)
    reports = _pmap(fn, tasks, jobs, chunksize=1) if jobs > 1 and len(tasks) > 1 else [fn(t) for t in tasks]
    if single and len(reports) == 1 and "error" in reports[0]:
        raise ValueError(reports[0]["error"])
    with staged(robust_json) as fh:
        dump_json(fh, clean_json(reports[0] if single and len(reports) == 1 else reports))
    return reports


def read_config_summaries(path) -> list[ConfigFeatureSummary]:
    """Summaries from a configuration table.

    The table does not carry trajectory counts, so ``n_trajectories`` is 0;
    the median turn count is recovered from ``trajectory_length_log``.
    """
    rows = read_csv(path, (*CONFIG_COLS, "mean_turns"))
    if rows and "trajectory_id" in rows[0]:
        raise SchemaError(f"{path}: expected a configuration-level table, got per-trajectory rows")
    out = []
    for r in rows:
        feats = {n: parse_float(r.get(n)) for n in FEATURE_NAMES}
        length_log = feats.get("trajectory_length_log")
        median_turns = float(np.expm1(length_log)) if length_log is not None else float("nan")
        out.append(ConfigFeatureSummary(config_from_row(r), 0, feats, float(r["mean_turns"]), median_turns))
    return out


def stage_taxonomy_fit(config_csv, model_json, types_csv=None, k: int = 5, seed: int = 0) -> TaxonomyModel:
    summaries = read_config_summaries(config_csv)
    model = fit_taxonomy(summaries, k=k, seed=seed)
    with staged(model_json) as fh:
        dump_json(fh, model.to_json())
    if types_csv:
        with staged(types_csv) as fh:
            write_csv(fh, (*CONFIG_COLS, "type"),
                      ([*config_cells(s.config), lab] for s, lab in zip(summaries, model.labels)))
    return model


def stage_taxonomy_assign(model_json, config_csv, types_csv) -> int:
    model = TaxonomyModel.load(model_json)
    summaries = read_config_summaries(config_csv)
    rows = []
    for s in summaries:
        t, d = assign_type(model, s)
        rows.append([*config_cells(s.config), t, d])
    with staged(types_csv) as fh:
        write_csv(fh, (*CONFIG_COLS, "type", "distance"), rows)
    return len(rows)


def stage_taxonomy_sweep(config_csv, out_csv, ks: Sequence[int], seed: int = 0) -> list[tuple[int, float]]:
    res = sweep(read_config_summaries(config_csv), ks, seed)
    with staged(out_csv) as fh:
        write_csv(fh, ("k", "silhouette"), res)
    return res


# report --------------------------------------------------------------------

REPORT_COLS = ("feature", "K", "mean_r", "n_pos", "n_neg", "i2", "classification", "r2_fw", "r2_llm",
               "perm_p_fw", "dagger")
BEESWARM_COLS = ("feature", *CONFIG_COLS, "kind", "effect", "se", "classification")


def _load_robust(path) -> list[dict]:
    if not path or not Path(path).is_file():
        return []
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    items = data if isinstance(data, list) else [data]
    for d in items:
        if "error" not in d and not {"feature", "moderator", "perm_p", "passes_chance_baseline"} <= set(d):
            raise SchemaError(f"{path}: robustness entry lacks feature/moderator/perm_p fields")
    return items


def build_report(meta_csv, fits_csv, robust_json, report_csv, beeswarm_csv=None, effects_csv=None) -> int:
    meta = read_meta(meta_csv)
    fits = read_fits(fits_csv) if fits_csv and Path(fits_csv).is_file() else []
    r2 = {(f["feature"], f["moderator"]): f["r2"] for f in fits}
    robust = {(d["feature"], d["moderator"]): d for d in _load_robust(robust_json) if "error" not in d}
    rows = []
    for m in meta:
        feat = m["feature"]
        rb = robust.get((feat, "framework"))
        rows.append([feat, m["K"], m["pooled_effect"], m["n_pos"], m["n_neg"], m["i2"], m["classification"],
                     r2.get((feat, "framework"), ""), r2.get((feat, "llm_family"), ""),
                     fmt(rb["perm_p"]) if rb else "", (rb["perm_p"] < 0.05) if rb else None])
    with staged(report_csv) as fh:
        write_csv(fh, REPORT_COLS, rows)
    if beeswarm_csv and effects_csv:
        cls = {m["feature"]: m["classification"] for m in meta}
        effects = read_effects(effects_csv)
        with staged(beeswarm_csv) as fh:
            write_csv(fh, BEESWARM_COLS,
                      ([e.feature, *config_cells(e.config), e.kind, e.effect, float(np.sqrt(e.variance)),
                        cls.get(e.feature, "")] for e in effects))
    return len(rows)


# runner --------------------------------------------------------------------

STAGES = ("ingest", "annotate", "features", "cfg", "patterns", "effects", "meta", "robust", "taxonomy", "report")


@dataclass
class RunConfig:
    input: Path
    out_dir: Path
    seed: int = 0
    jobs: int = 1
    force: bool = False
    rules_dir: Path | None = None
    family_map: Path | None = None
    thresholds: Path | None = None
    calibrate: bool = False
    skip: tuple[str, ...] = ()
    cascade_min_len: int = 1
    policy: FilterPolicy = field(default_factory=FilterPolicy)
    variance: str = "normal"
    zero_band: float = 0.0
    n_boot: int = 2000
    n_perm: int = 2000
    k: int = 5

    def __post_init__(self) -> None:
        unknown = set(self.skip) - set(STAGES)
        if unknown:
            raise ValueError(f"unknown stage(s) to skip: {sorted(unknown)}")
        for required in ("ingest", "annotate", "features", "effects", "meta"):
            if required in self.skip:
                raise ValueError(f"stage {required!r} cannot be skipped")


def _fresh(inputs: Sequence[Path], outputs: Sequence[Path], params: dict, previous: dict | None) -> bool:
    if previous is None or previous.get("params") != params:
        return False
    if not all(p.is_file() for p in outputs):
        return False
    if any(not p.exists() for p in inputs):
        return False
    newest_in = max((_mtime(p) for p in inputs), default=0)
    return min(p.stat().st_mtime_ns for p in outputs) >= newest_in


def _mtime(p: Path) -> int:
    if p.is_dir():
        return max((q.stat().st_mtime_ns for q in p.rglob("*") if q.is_file()), default=p.stat().st_mtime_ns)
    return p.stat().st_mtime_ns


def versions() -> dict[str, str]:
    return {"trajmeta": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version(), "kernel_backend": kernels.BACKEND}


def run_pipeline(cfg: RunConfig) -> dict:
    """Run every stage in order; returns the manifest."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.json"
    previous = {}
    if manifest_path.is_file():
        try:
            previous = json.loads(manifest_path.read_text(encoding="utf-8")).get("stages", {})
        except json.JSONDecodeError:
            previous = {}

    p = {name: out / name for name in (
        "trajectories.jsonl", "ingest_report.json", "annotated.jsonl", "traj_features.csv",
        "features.csv", "cfg_features.csv", "thresholds.json", "patterns.csv", "effects.csv",
        "skips.csv", "meta.csv", "fits.csv", "robust.json", "taxonomy_model.json", "types.csv",
        "report.csv", "beeswarm.csv")}
    _, _, rules_digest = load_rules(cfg.rules_dir)
    thresholds_path = Path(cfg.thresholds) if cfg.thresholds else p["thresholds.json"]
    use_patterns = "patterns" not in cfg.skip
    use_cfg = "cfg" not in cfg.skip

    stages: dict[str, dict] = {}

    def step(name: str, inputs: list[Path], outputs: list[Path], params: dict, fn: Callable[[], Any]) -> None:
        entry = {"params": params, "inputs": [_rel(i, out) for i in inputs]}
        if not cfg.force and _fresh(inputs, outputs, params, previous.get(name)):
            log.info("stage %s: up to date, skipped", name)
        else:
            log.info("stage %s: running", name)
            try:
                fn()
            except Exception as exc:
                raise StageError(name, exc) from exc
        entry["outputs"] = {_rel(o, out): sha256_file(o) for o in outputs}
        stages[name] = entry

    step("ingest", [Path(cfg.input)], [p["trajectories.jsonl"], p["ingest_report.json"]],
         {"family_map": str(cfg.family_map) if cfg.family_map else None},
         lambda: stage_ingest(cfg.input, p["trajectories.jsonl"], p["ingest_report.json"],
                              family_map_path=cfg.family_map, jobs=cfg.jobs))
    step("annotate", [p["trajectories.jsonl"]], [p["annotated.jsonl"]],
         {"rules_sha256": rules_digest, "cascade_min_len": cfg.cascade_min_len},
         lambda: stage_annotate(p["trajectories.jsonl"], p["annotated.jsonl"], cfg.rules_dir,
                                cfg.cascade_min_len, cfg.jobs))
    step("features", [p["annotated.jsonl"]], [p["traj_features.csv"], p["features.csv"]], {},
         lambda: stage_features(p["annotated.jsonl"], p["traj_features.csv"], p["features.csv"], cfg.jobs))
    if use_cfg:
        step("cfg", [p["annotated.jsonl"]], [p["cfg_features.csv"]], {},
             lambda: stage_cfg(p["annotated.jsonl"], p["cfg_features.csv"], jobs=cfg.jobs))
    threshold_digest = None
    if use_patterns:
        if cfg.calibrate:
            step("calibrate", [p["annotated.jsonl"]], [thresholds_path], {},
                 lambda: stage_calibrate(p["annotated.jsonl"], thresholds_path))
        try:
            threshold_digest = load_thresholds(thresholds_path).digest()
        except (OSError, ValueError) as exc:
            raise StageError("patterns", exc) from exc
        step("patterns", [p["annotated.jsonl"], thresholds_path], [p["patterns.csv"]],
             {"thresholds_sha256": threshold_digest},
             lambda: stage_patterns(p["annotated.jsonl"], thresholds_path, p["patterns.csv"], cfg.jobs))
    eff_inputs = [p["traj_features.csv"]] + ([p["cfg_features.csv"]] if use_cfg else []) \
        + ([p["patterns.csv"]] if use_patterns else [])
    pol = cfg.policy
    step("effects", eff_inputs, [p["effects.csv"], p["skips.csv"]],
         {"min_total": pol.min_total, "min_resolved": pol.min_resolved, "min_unresolved": pol.min_unresolved,
          "variance": cfg.variance, "seed": cfg.seed},
         lambda: stage_effects(p["traj_features.csv"], p["effects.csv"], p["skips.csv"],
                               cfg_csv=p["cfg_features.csv"] if use_cfg else None,
                               patterns_csv=p["patterns.csv"] if use_patterns else None,
                               policy=pol, variance=cfg.variance, seed=cfg.seed))
    step("meta", [p["effects.csv"]], [p["meta.csv"], p["fits.csv"]], {"zero_band": cfg.zero_band},
         lambda: stage_meta(p["effects.csv"], p["meta.csv"], p["fits.csv"], cfg.zero_band))
    if "robust" not in cfg.skip:
        step("robust", [p["effects.csv"]], [p["robust.json"]],
             {"n_boot": cfg.n_boot, "n_perm": cfg.n_perm, "seed": cfg.seed},
             lambda: stage_robust(p["effects.csv"], p["robust.json"], n_boot=cfg.n_boot, n_perm=cfg.n_perm,
                                  seed=cfg.seed, jobs=cfg.jobs))
    if "taxonomy" not in cfg.skip:
        step("taxonomy", [p["features.csv"]], [p["taxonomy_model.json"], p["types.csv"]],
             {"k": cfg.k, "seed": cfg.seed},
             lambda: stage_taxonomy_fit(p["features.csv"], p["taxonomy_model.json"], p["types.csv"],
                                        cfg.k, cfg.seed))
    if "report" not in cfg.skip:
        robust_in = [p["robust.json"]] if "robust" not in cfg.skip else []
        step("report", [p["meta.csv"], p["fits.csv"], p["effects.csv"], *robust_in],
             [p["report.csv"], p["beeswarm.csv"]], {},
             lambda: build_report(p["meta.csv"], p["fits.csv"], p["robust.json"] if robust_in else None,
                                  p["report.csv"], p["beeswarm.csv"], p["effects.csv"]))

    manifest = {
        "versions": versions(),
        "seed": cfg.seed,
        "rules_sha256": rules_digest,
        "thresholds_sha256": threshold_digest,
        "stages": stages,
    }
    with staged(manifest_path) as fh:
        dump_json(fh, manifest)
    return manifest


def _rel(path: Path, base: Path) -> str:
    try:
        return str(Path(path).resolve().relative_to(base.resolve()))
    except ValueError:
        return str(path)
