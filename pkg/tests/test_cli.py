import csv
import json

import numpy as np
import pytest
import yaml

from ctganru.cli import main, resolve_config, build_parser, stream_seed
from ctganru.tabular import Dataset, dump_schema, make_schema, write_csv

TINY_CTGAN = {"epochs": 1, "batch_size": 40, "pac": 4, "z_dim": 8,
              "generator_dims": [16, 16, 16, 8], "discriminator_dims": [16, 16, 8, 8]}


@pytest.fixture
def crash_files(tmp_path):
    rng = np.random.default_rng(0)
    n0, n1 = 600, 57
    schema = make_schema(["speed"], {"road": ["urban", "rural"], "severity": ["nFI", "FI"]}, label="severity")
    y = np.r_[np.zeros(n0, int), np.ones(n1, int)]
    speed = rng.normal(50, 10, n0 + n1) + 15 * y
    road = (rng.random(n0 + n1) < 0.3 + 0.3 * y).astype(int)
    ds = Dataset.from_columns(schema, {"speed": speed, "road": road, "severity": y})
    write_csv(ds, tmp_path / "crash.csv")
    dump_schema(schema, tmp_path / "schema.yaml")
    return tmp_path


def _write_cfg(path, cfg):
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def test_mixed_plan_reaches_target_counts(crash_files, capsys):
    d = crash_files
    cfg = _write_cfg(d / "cfg.yaml", {"ctgan": TINY_CTGAN})
    rc = main(["resample", "--config", cfg, "--data", str(d / "crash.csv"), "--schema", str(d / "schema.yaml"),
               "--seed", "1", "--out", str(d / "out"), "--method", "ctgan_ru",
               "--ru-targets", "nFI=114,FI=57", "--targets", "nFI=114,FI=114"])
    assert rc == 0
    assert "nFI=114 FI=114" in capsys.readouterr().out
    prov = json.loads((d / "out" / "resampled.provenance.json").read_text())
    assert prov["output_counts"] == {"nFI": 114, "FI": 114}
    assert prov["input_counts"] == {"nFI": 600, "FI": 57}
    man = json.loads((d / "out" / "manifest.json").read_text())
    assert man["seed"] == 1 and set(man["stream_seeds"]) == {"split", "resample", "train", "mc"}
    assert len(man["config_sha256"]) == 64


def test_rerun_is_byte_identical(crash_files):
    d = crash_files
    args = ["resample", "--data", str(d / "crash.csv"), "--schema", str(d / "schema.yaml"), "--seed", "3",
            "--method", "smote_nc", "--targets", "600,600"]
    assert main(args + ["--out", str(d / "a")]) == 0
    assert main(args + ["--out", str(d / "b")]) == 0
    for name in ("resampled.csv", "manifest.json", "resampled.provenance.json"):
        assert (d / "a" / name).read_bytes() == (d / "b" / name).read_bytes()
    assert main(args[:-5] + ["4", "--method", "smote_nc", "--targets", "600,600", "--out", str(d / "c")]) == 0
    assert (d / "a" / "resampled.csv").read_bytes() != (d / "c" / "resampled.csv").read_bytes()


def test_ratio_plan_from_flags(crash_files):
    d = crash_files
    assert main(["resample", "--data", str(d / "crash.csv"), "--schema", str(d / "schema.yaml"), "--seed", "1",
                 "--out", str(d / "o"), "--method", "ru", "--ratios", "2,1", "--multiplier", "1"]) == 0
    prov = json.loads((d / "o" / "resampled.provenance.json").read_text())
    assert prov["output_counts"] == {"nFI": 114, "FI": 57}


def test_fit_and_evaluate_round_trip(crash_files, capsys):
    d = crash_files
    base = ["--data", str(d / "crash.csv"), "--schema", str(d / "schema.yaml"), "--seed", "0"]
    assert main(["fit", *base, "--out", str(d / "fit")]) == 0
    report = (d / "fit" / "report.txt").read_text()
    assert "McFadden" in report and "road=rural" in report
    with open(d / "fit" / "coefficients.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["name"] for r in rows] == ["const", "speed", "road=rural"]
    assert main(["evaluate", *base, "--fit", str(d / "fit" / "fit.json"), "--out", str(d / "ev")]) == 0
    m = json.loads((d / "ev" / "metrics.json").read_text())
    assert 0 <= m["g_mean"] <= 1
    assert sum(m["confusion"].values()) == 657


def test_evaluate_perfect_predictions(tmp_path):
    (tmp_path / "p.csv").write_text("y_true,y_pred\n1,1\n0,0\n0,0\n1,1\n")
    assert main(["evaluate", "--predictions", str(tmp_path / "p.csv"), "--seed", "0", "--out", str(tmp_path / "o")]) == 0
    m = json.loads((tmp_path / "o" / "metrics.json").read_text())
    assert m["g_mean"] == 1.0 and m["sensitivity"] == 1.0


def test_evaluate_probability_column(tmp_path):
    (tmp_path / "p.csv").write_text("y_true,prob\n1,0.9\n0,0.6\n0,0.1\n1,0.4\n")
    assert main(["evaluate", "--predictions", str(tmp_path / "p.csv"), "--seed", "0", "--threshold", "0.5",
                 "--out", str(tmp_path / "o")]) == 0
    m = json.loads((tmp_path / "o" / "metrics.json").read_text())
    assert m["confusion"] == {"tp": 1, "fp": 1, "fn": 1, "tn": 1}


def test_seeds_sweep_table(crash_files, capsys):
    d = crash_files
    cfg = _write_cfg(d / "sweep.yaml", {"data": str(d / "crash.csv"), "schema": str(d / "schema.yaml"),
                                         "resample": {"method": "ru", "ratios": [1, 1]}})
    assert main(["seeds-sweep", "--config", cfg, "--seeds", "1,2,3,4", "--out", str(d / "sw")]) == 0
    with open(d / "sw" / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["seed"] for r in rows] == ["1", "2", "3", "4", "mean±std"]
    assert "±" in rows[-1]["g_mean"]
    res = json.loads((d / "sw" / "sweep.json").read_text())
    assert res["mean"]["g_mean"] == pytest.approx(np.mean([r["g_mean"] for r in res["rows"]]))


def test_diagnose_outputs(crash_files):
    d = crash_files
    assert main(["diagnose", "--real", str(d / "crash.csv"), "--synthetic", str(d / "crash.csv"),
                 "--schema", str(d / "schema.yaml"), "--seed", "0", "--bins", "10", "--out", str(d / "dg")]) == 0
    div = json.loads((d / "dg" / "divergence.json").read_text())
    assert all(v == 0 for v in div["marginals"].values())
    assert (d / "dg" / "hist_speed.csv").exists()
    assert (d / "dg" / "joint_speed__road_real.csv").exists()


def test_mc_run_artifacts(tmp_path):
    cfg = _write_cfg(tmp_path / "mc.yaml", {
        "scenarios": [
            {"name": "oracle", "dgp": {"n": 400, "proportions": [0.5, 0.5]}},
            {"name": "imb", "dgp": {"n": 400, "proportions": [0.5, 0.5]}, "imbalance": [4, 1]},
        ]
    })
    assert main(["mc-run", "--config", cfg, "--seed", "2", "--R", "3", "--out", str(tmp_path / "mc")]) == 0
    for name in ("replications.csv", "boxplot.csv", "amse.csv", "manifest.json"):
        assert (tmp_path / "mc" / name).exists()
    with open(tmp_path / "mc" / "replications.csv") as fh:
        header = next(csv.reader(fh))
    assert header[-2:] == ["train_counts", "error"]
    man = json.loads((tmp_path / "mc" / "manifest.json").read_text())
    assert man["calibrated"]["oracle"]["intercept"] is not None
    assert man["base_seed"] == stream_seed(2, "mc")


def test_flags_override_file(tmp_path):
    cfg = _write_cfg(tmp_path / "c.yaml", {"seed": 5, "out": "x", "ctgan": {"epochs": 7}})
    args = build_parser().parse_args(["resample", "--config", cfg, "--seed", "9", "--epochs", "3"])
    resolved = resolve_config(args)
    assert resolved["seed"] == 9 and resolved["ctgan"]["epochs"] == 3 and resolved["out"] == "x"


def test_stream_seeds_are_independent():
    s = {name: stream_seed(7, name) for name in ("split", "resample", "train", "mc")}
    assert len(set(s.values())) == 4
    assert stream_seed(7, "split") == s["split"]


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["bogus"],
        ["fit", "--out", "o"],
        ["fit", "--seed", "1", "--out", "o", "--data", "missing.csv", "--schema", "missing.yaml"],
        ["resample", "--seed", "1", "--out", "o", "--config", "nope.yaml"],
        ["mc-run", "--seed", "1", "--out", "o"],
    ],
)
def test_config_faults_exit_one(argv, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: config:")


def test_separation_exits_two(tmp_path, capsys):
    schema = make_schema([], {"x": ["0", "1"], "y": ["0", "1"]}, label="y")
    x = np.tile([0, 1], 50)
    write_csv(Dataset.from_columns(schema, {"x": x, "y": x}), tmp_path / "d.csv")
    dump_schema(schema, tmp_path / "s.yaml")
    rc = main(["fit", "--data", str(tmp_path / "d.csv"), "--schema", str(tmp_path / "s.yaml"), "--seed", "0",
               "--out", str(tmp_path / "o")])
    assert rc == 2
    err = capsys.readouterr().err
    assert err.startswith("error: numerical: SeparationError") and "x=1" in err
