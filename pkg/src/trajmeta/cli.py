"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .annotate import RuleError
from .effects import FilterPolicy
from .meta import MODERATORS, meta_regress, group_by_feature
from .pipeline import (STAGES, RunConfig, StageError, build_report, run_pipeline, stage_annotate,
                       stage_calibrate, stage_cfg, stage_effects, stage_features, stage_ingest, stage_meta,
                       stage_patterns, stage_robust, stage_synth, stage_taxonomy_assign, stage_taxonomy_fit,
                       stage_taxonomy_sweep, staged)
from .tables import SchemaError, dump_json, read_csv, read_effects, write_fits

log = logging.getLogger("trajmeta")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
DATA_ERRORS = (ValueError, KeyError, OSError, SchemaError, RuleError, json.JSONDecodeError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0), help="global random seed (default 0)")
    p.add_argument("--out-dir", type=Path, default=d(Path(".")), help="directory for default output paths")
    p.add_argument("--format", choices=("csv", "json"), default=d("csv"), help="table output format")
    p.add_argument("--force", action="store_true", default=d(False), help="rerun stages even if up to date")
    p.add_argument("--jobs", type=int, default=d(1), help="worker processes (default 1)")
    p.add_argument("-v", "--verbose", action="count", default=d(0))


def _k_range(text: str) -> list[int]:
    try:
        if ":" in text:
            lo, hi = (int(x) for x in text.split(":"))
            return list(range(lo, hi + 1))
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad k range {text!r}; use LO:HI or a,b,c") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trajmeta", description="Behavioral features and meta-analysis of agent trajectories.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name: str, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_, description=help_)
        _global_flags(p, suppress=True)
        return p

    p = cmd("ingest", "parse a directory of logs into canonical JSONL")
    p.add_argument("--in", "--input", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path)
    p.add_argument("--report", type=Path)
    p.add_argument("--adapters", help="comma-separated adapter names (default: all)")
    p.add_argument("--family-map", type=Path, help="JSON mapping of llm name to family")

    p = cmd("annotate", "classify actions, detect errors and segment cascades")
    p.add_argument("--in", "--input", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path)
    p.add_argument("--rules", type=Path, help="directory with classifier.json and errors.json")
    p.add_argument("--cascade-min-len", type=int, default=1)

    p = cmd("features", "per-configuration features (medians over trajectories)")
    p.add_argument("--in", "--input", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path, help="configuration-level table (default features.csv)")
    p.add_argument("--per-trajectory", type=Path, help="per-trajectory table (default traj_features.csv)")

    p = cmd("cfg", "contextual-state motif graph features")
    p.add_argument("--in", "--input", dest="input", type=Path, required=True)
    p.add_argument("--out", type=Path)
    p.add_argument("--export-dot", "--dot-dir", dest="dot_dir", type=Path,
                   help="also write one DOT graph per trajectory into this directory")

    p = cmd("patterns", "binary patterns P1-P7, or calibrate their thresholds")
    p.add_argument("action", nargs="?", choices=("detect", "calibrate"), default="detect")
    p.add_argument("--in", "--input", dest="input", type=Path, required=True)
    p.add_argument("--manifest", "--thresholds", dest="thresholds", type=Path,
                   help="threshold manifest (default <out-dir>/thresholds.json)")
    p.add_argument("--out", type=Path)

    p = cmd("effects", "per-configuration effect sizes")
    p.add_argument("--traj", type=Path, help="per-trajectory feature table")
    p.add_argument("--features", type=Path,
                   help="configuration-level table; only used as the trajectory table when --traj is absent")
    p.add_argument("--cfg", type=Path)
    p.add_argument("--patterns", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--skips", type=Path)
    p.add_argument("--min-total", type=int, default=20)
    p.add_argument("--min-resolved", type=int, default=5)
    p.add_argument("--min-unresolved", type=int, default=5)
    p.add_argument("--variance", choices=("normal", "bootstrap"), default="normal")

    p = cmd("meta", "random-effects pooling, or single-moderator regression")
    p.add_argument("action", nargs="?", choices=("pool", "regress"), default="pool")
    p.add_argument("--effects", type=Path, required=True)
    p.add_argument("--out", type=Path)
    p.add_argument("--fits", type=Path, help="pool: also write moderator fits here")
    p.add_argument("--moderator", choices=MODERATORS, help="regress: moderator (default both)")
    p.add_argument("--zero-band", type=float, default=0.0)

    p = cmd("robust", "bootstrap, permutation and leave-one-out diagnostics for moderator R2")
    p.add_argument("--effects", type=Path, required=True)
    p.add_argument("--moderator", choices=MODERATORS, default="framework")
    p.add_argument("--feature", action="append", help="feature to analyse (repeatable; default all)")
    p.add_argument("--n-boot", type=int, default=2000)
    p.add_argument("--n-perm", type=int, default=2000)
    p.add_argument("--out", type=Path)

    p = cmd("taxonomy", "PCA + k-means trajectory types")
    p.add_argument("action", choices=("fit", "assign", "sweep"))
    p.add_argument("--features", type=Path, required=True, help="configuration-level feature table")
    p.add_argument("--model", type=Path)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--k-range", type=_k_range, default=[4, 5, 6])
    p.add_argument("--out", type=Path)

    p = cmd("synth", "generate a synthetic corpus from a regime spec")
    p.add_argument("--spec", type=Path, required=True)
    p.add_argument("--out", type=Path)

    p = cmd("run", "run the whole pipeline on a directory of logs")
    p.add_argument("--in", "--input", dest="input", type=Path, required=True)
    p.add_argument("--rules", type=Path)
    p.add_argument("--family-map", type=Path)
    p.add_argument("--thresholds", type=Path)
    p.add_argument("--calibrate", action="store_true", help="derive thresholds from this corpus")
    p.add_argument("--skip", default="", help=f"comma-separated stages to skip ({', '.join(STAGES)})")
    p.add_argument("--cascade-min-len", type=int, default=1)
    p.add_argument("--min-total", type=int, default=20)
    p.add_argument("--min-resolved", type=int, default=5)
    p.add_argument("--min-unresolved", type=int, default=5)
    p.add_argument("--variance", choices=("normal", "bootstrap"), default="normal")
    p.add_argument("--zero-band", type=float, default=0.0)
    p.add_argument("--n-boot", type=int, default=2000)
    p.add_argument("--n-perm", type=int, default=2000)
    p.add_argument("--k", type=int, default=5)

    p = cmd("report", "combined per-feature table and beeswarm data")
    p.add_argument("--meta", type=Path, required=True)
    p.add_argument("--fits", type=Path)
    p.add_argument("--robust", type=Path)
    p.add_argument("--effects", type=Path, help="needed for the beeswarm file")
    p.add_argument("--out", type=Path)
    p.add_argument("--beeswarm", type=Path)
    return parser


def _out(args, value, default: str) -> Path:
    return value if value is not None else Path(args.out_dir) / default


def _as_format(args, *paths: Path) -> None:
    """Rewrite CSV outputs as JSON arrays of row objects when --format json."""
    if args.format != "json":
        return
    for path in paths:
        if path is None or not Path(path).is_file() or Path(path).suffix != ".csv":
            continue
        rows = read_csv(path)
        target = Path(path).with_suffix(".json")
        with staged(target) as fh:
            dump_json(fh, rows)
        Path(path).unlink()


def _policy(args) -> FilterPolicy:
    return FilterPolicy(args.min_total, args.min_resolved, args.min_unresolved)


def dispatch(args) -> int:
    c = args.command
    if c == "ingest":
        report = stage_ingest(args.input, _out(args, args.out, "trajectories.jsonl"),
                              _out(args, args.report, "ingest_report.json"),
                              args.adapters.split(",") if args.adapters else None,
                              args.family_map, args.jobs)
        log.info("parsed %d trajectories, rejected %d", report["trajectories_parsed"],
                 report["trajectories_rejected"])
    elif c == "annotate":
        stage_annotate(args.input, _out(args, args.out, "annotated.jsonl"), args.rules,
                       args.cascade_min_len, args.jobs)
    elif c == "features":
        out = _out(args, args.out, "features.csv")
        traj_out = _out(args, args.per_trajectory, "traj_features.csv")
        stage_features(args.input, traj_out, out, args.jobs)
        _as_format(args, out, traj_out)
    elif c == "cfg":
        out = _out(args, args.out, "cfg_features.csv")
        stage_cfg(args.input, out, args.dot_dir, args.jobs)
        _as_format(args, out)
    elif c == "patterns":
        thresholds = args.thresholds or Path(args.out_dir) / "thresholds.json"
        if args.action == "calibrate":
            stage_calibrate(args.input, args.out or thresholds)
        else:
            out = _out(args, args.out, "patterns.csv")
            stage_patterns(args.input, thresholds, out, args.jobs)
            _as_format(args, out)
    elif c == "effects":
        out = _out(args, args.out, "effects.csv")
        skips = _out(args, args.skips, "skips.csv")
        traj = args.traj or args.features
        if traj is None:
            raise UsageError("effects needs --traj (per-trajectory feature table)")
        n = stage_effects(traj, out, skips, cfg_csv=args.cfg, patterns_csv=args.patterns,
                          policy=_policy(args), variance=args.variance, seed=args.seed)
        log.info("%d effect sizes", n)
        _as_format(args, out, skips)
    elif c == "meta":
        if args.action == "regress":
            out = _out(args, args.out, "fits.csv")
            fits = []
            mods = [args.moderator] if args.moderator else list(MODERATORS)
            for feature, effects in sorted(group_by_feature(read_effects(args.effects)).items()):
                for mod in mods:
                    try:
                        fits.append(meta_regress(effects, mod))
                    except ValueError as exc:
                        log.warning("%s/%s: %s", feature, mod, exc)
            with staged(out) as fh:
                write_fits(fh, fits)
            _as_format(args, out)
        else:
            out = _out(args, args.out, "meta.csv")
            stage_meta(args.effects, out, args.fits, args.zero_band)
            _as_format(args, out, args.fits)
    elif c == "robust":
        out = _out(args, args.out, "robust.json")
        single = bool(args.feature) and len(args.feature) == 1
        stage_robust(args.effects, out, moderators=[args.moderator], features=args.feature,
                     n_boot=args.n_boot, n_perm=args.n_perm, seed=args.seed, jobs=args.jobs, single=single)
    elif c == "taxonomy":
        if args.action == "fit":
            model = stage_taxonomy_fit(args.features, args.model or _out(args, args.out, "taxonomy_model.json"),
                                       None, args.k, args.seed)
            log.info("silhouette %.3f", model.silhouette)
        elif args.action == "assign":
            if args.model is None:
                raise UsageError("taxonomy assign needs --model")
            out = _out(args, args.out, "types.csv")
            stage_taxonomy_assign(args.model, args.features, out)
            _as_format(args, out)
        else:
            out = _out(args, args.out, "silhouette_sweep.csv")
            for k, s in stage_taxonomy_sweep(args.features, out, args.k_range, args.seed):
                print(f"k={k}\tsilhouette={s:.4f}")
            _as_format(args, out)
    elif c == "synth":
        n = stage_synth(args.spec, _out(args, args.out, "synthetic.jsonl"), args.seed, args.jobs)
        log.info("wrote %d trajectories", n)
    elif c == "run":
        cfg = RunConfig(
            input=args.input, out_dir=args.out_dir, seed=args.seed, jobs=args.jobs, force=args.force,
            rules_dir=args.rules, family_map=args.family_map, thresholds=args.thresholds,
            calibrate=args.calibrate, skip=tuple(s for s in args.skip.split(",") if s),
            cascade_min_len=args.cascade_min_len, policy=_policy(args), variance=args.variance,
            zero_band=args.zero_band, n_boot=args.n_boot, n_perm=args.n_perm, k=args.k,
        )
        run_pipeline(cfg)
        if args.format == "json":
            for name in ("report.csv", "meta.csv", "fits.csv"):
                path = Path(args.out_dir) / name
                if path.is_file():
                    with staged(path.with_suffix(".json")) as fh:
                        dump_json(fh, read_csv(path))
    elif c == "report":
        out = _out(args, args.out, "report.csv")
        bees = args.beeswarm or (Path(args.out_dir) / "beeswarm.csv" if args.effects else None)
        build_report(args.meta, args.fits, args.robust, out, bees, args.effects)
        _as_format(args, out, bees)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        return dispatch(args)
    except UsageError as exc:
        print(f"trajmeta: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"trajmeta: {exc}", file=sys.stderr)
        return EXIT_DATA if isinstance(exc.cause, DATA_ERRORS) else EXIT_INTERNAL
    except DATA_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"trajmeta: error: {msg}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"trajmeta: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
