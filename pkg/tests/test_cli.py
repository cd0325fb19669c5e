import json
import logging

import pytest

from trajmeta.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main

MIX = {"Exploration": 0.35, "Modification": 0.2, "Test": 0.2, "Navigation": 0.1, "Utility": 0.1, "Unknown": 0.05}


def small_spec(n_configs=6, n=40):
    regime = {"length_dist": [4, 20, 8], "action_mix": MIX, "error_prob": 0.2, "cascade_stickiness": 0.4,
              "repeat_prob": 0.1}
    return {
        "regimes": {
            "pos": {**regime, "outcome_model": {"feature": "length", "direction": 1, "strength": 1.5}},
            "neg": {**regime, "outcome_model": {"feature": "length", "direction": -1, "strength": 1.5}},
        },
        "configs": [{"framework": f"fw{i % 3}", "llm": f"m{i}", "llm_family": f"fam{i % 2}",
                     "regime": "pos" if i % 2 else "neg", "n": n} for i in range(n_configs)],
    }


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    (d / "spec.json").write_text(json.dumps(small_spec()))
    (d / "in").mkdir()
    assert main(["synth", "--spec", str(d / "spec.json"), "--seed", "4",
                 "--out", str(d / "in" / "synthetic.jsonl")]) == EXIT_OK
    return d


RUN_FLAGS = ["--calibrate", "--n-boot", "100", "--n-perm", "100", "--k", "2"]


def test_run_writes_all_outputs(corpus, tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--in", str(corpus / "in"), "--out-dir", str(out), *RUN_FLAGS]) == EXIT_OK
    for name in ("trajectories.jsonl", "annotated.jsonl", "features.csv", "traj_features.csv",
                 "cfg_features.csv", "patterns.csv", "effects.csv", "meta.csv", "fits.csv",
                 "robust.json", "taxonomy_model.json", "types.csv", "report.csv", "manifest.json"):
        assert (out / name).is_file(), name
    assert not list(out.glob("*.partial"))
    header = (out / "effects.csv").read_text().splitlines()[0]
    assert header == "framework,llm,llm_family,feature,kind,effect,variance,n_resolved,n_unresolved"


def test_rerun_skips_fresh_stages(corpus, tmp_path, caplog):
    out = tmp_path / "out"
    args = ["run", "--in", str(corpus / "in"), "--out-dir", str(out), *RUN_FLAGS, "--skip", "robust,taxonomy"]
    assert main(args) == EXIT_OK
    before = (out / "meta.csv").stat().st_mtime_ns
    caplog.set_level(logging.INFO, logger="trajmeta")
    assert main(args) == EXIT_OK
    assert (out / "meta.csv").stat().st_mtime_ns == before
    assert "stage meta: up to date, skipped" in caplog.text
    assert main([*args, "--force"]) == EXIT_OK
    assert (out / "meta.csv").stat().st_mtime_ns > before


def test_stagewise_commands(corpus, tmp_path):
    o = str(tmp_path)
    steps = [
        ["ingest", "--in", str(corpus / "in")],
        ["annotate", "--in", f"{o}/trajectories.jsonl"],
        ["features", "--in", f"{o}/annotated.jsonl"],
        ["cfg", "--in", f"{o}/annotated.jsonl", "--export-dot", f"{o}/dot"],
        ["patterns", "calibrate", "--in", f"{o}/annotated.jsonl"],
        ["patterns", "--in", f"{o}/annotated.jsonl"],
        ["effects", "--traj", f"{o}/traj_features.csv", "--cfg", f"{o}/cfg_features.csv",
         "--patterns", f"{o}/patterns.csv"],
        ["meta", "pool", "--effects", f"{o}/effects.csv", "--fits", f"{o}/fits.csv"],
        ["meta", "regress", "--effects", f"{o}/effects.csv", "--moderator", "framework",
         "--out", f"{o}/fits_fw.csv"],
        ["robust", "--effects", f"{o}/effects.csv", "--feature", "mean_turns", "--n-boot", "100",
         "--n-perm", "100"],
        ["taxonomy", "fit", "--features", f"{o}/features.csv", "--k", "2"],
        ["taxonomy", "assign", "--features", f"{o}/features.csv", "--model", f"{o}/taxonomy_model.json"],
        ["report", "--meta", f"{o}/meta.csv", "--fits", f"{o}/fits.csv", "--robust", f"{o}/robust.json",
         "--effects", f"{o}/effects.csv"],
    ]
    for s in steps:
        assert main([*s, "--out-dir", o]) == EXIT_OK, s
    assert list((tmp_path / "dot").glob("*.dot"))
    assert (tmp_path / "report.csv").is_file()
    assert (tmp_path / "beeswarm.csv").is_file()


def test_json_format(corpus, tmp_path):
    o = str(tmp_path)
    assert main(["ingest", "--in", str(corpus / "in"), "--out-dir", o]) == EXIT_OK
    assert main(["annotate", "--in", f"{o}/trajectories.jsonl", "--out-dir", o]) == EXIT_OK
    assert main(["features", "--in", f"{o}/annotated.jsonl", "--out-dir", o, "--format", "json"]) == EXIT_OK
    rows = json.loads((tmp_path / "features.json").read_text())
    assert len(rows) == 6 and "mean_turns" in rows[0]
    assert not (tmp_path / "features.csv").exists()


def test_usage_errors(capsys, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["ingest"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["ingest", "--in", str(tmp_path), "--jobs", "0"])
    assert exc.value.code == EXIT_USAGE
    assert main(["effects", "--out-dir", str(tmp_path)]) == EXIT_USAGE
    assert "--traj" in capsys.readouterr().err


def test_missing_thresholds_is_data_error(corpus, tmp_path, capsys):
    o = str(tmp_path)
    assert main(["ingest", "--in", str(corpus / "in"), "--out-dir", o]) == EXIT_OK
    assert main(["annotate", "--in", f"{o}/trajectories.jsonl", "--out-dir", o]) == EXIT_OK
    assert main(["patterns", "--in", f"{o}/annotated.jsonl", "--out-dir", o]) == EXIT_DATA
    assert "thresholds" in capsys.readouterr().err


def test_data_errors(tmp_path, capsys):
    assert main(["ingest", "--in", str(tmp_path / "missing"), "--out-dir", str(tmp_path)]) == EXIT_DATA
    bad = tmp_path / "bad.csv"
    bad.write_text("framework,llm\nf,m\n")
    assert main(["meta", "--effects", str(bad), "--out-dir", str(tmp_path)]) == EXIT_DATA
    assert "missing column" in capsys.readouterr().err


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "trajmeta" in capsys.readouterr().out
