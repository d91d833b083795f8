import csv
import json
import math

import numpy as np
import pytest

from projector_info import cli, matrix_info, train_harness
from projector_info.exact_info import BoundReport

SMALL = {
    "epochs": 2,
    "steps_per_epoch": 2,
    "batch_size": 32,
    "metric_batch": 64,
    "probe_steps": 10,
    "data": {"n": 256},
}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


def run(argv, capsys=None):
    code = cli.main(argv)
    out = capsys.readouterr() if capsys is not None else None
    return code, out


def test_verify_bounds_singletons(tmp_path, capsys):
    code, out = run(["verify-bounds", "--chains", "1", "--max-alphabet", "1", "--out", str(tmp_path)], capsys)
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "bounds_report.csv")))
    assert [r["theorem"] for r in rows] == ["theorem1", "theorem2", "theorem3"]
    assert all(float(r["slack"]) == 0.0 for r in rows)
    assert "theorem1 min_slack" in out.out


def test_verify_bounds_small_run_and_overwrite(tmp_path):
    args = ["verify-bounds", "--chains", "50", "--max-alphabet", "4", "--seed", "3", "--out", str(tmp_path)]
    assert cli.main(args) == 0
    first = (tmp_path / "bounds_report.csv").read_bytes()
    assert len(first.splitlines()) == 1 + 150
    assert cli.main(args) == 1
    assert cli.main(args + ["--force"]) == 0
    assert (tmp_path / "bounds_report.csv").read_bytes() == first


def test_verify_bounds_violation_exit_code(tmp_path, monkeypatch):
    broken = lambda c: BoundReport("theorem1", 0.0, 1.0, -1.0)  # noqa: E731
    monkeypatch.setitem(cli.exact_info.THEOREMS, "theorem1", broken)
    assert cli.main(["verify-bounds", "--chains", "2", "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize(
    "argv",
    [
        ["verify-bounds", "--max-alphabet", "0"],
        ["verify-bounds", "--max-alphabet", "9"],
        ["verify-bounds", "--chains", "0"],
        ["verify-bounds", "--chains", "many"],
        ["sweep", "--axis", "depth", "--values", "1"],
        ["sweep", "--axis", "lambda", "--values", "a,b"],
        ["estimate", "a.csv"],
        ["no-such-command"],
    ],
)
def test_usage_errors_exit_64(argv, tmp_path):
    code = None
    try:
        code = cli.main(argv + ["--out", str(tmp_path)] if argv[0] == "verify-bounds" else argv)
    except SystemExit as exc:
        code = exc.code
    assert code == 64


def write_rows(path, rows):
    np.savetxt(path, np.asarray(rows, dtype=float), delimiter=",")
    return str(path)


def test_estimate_examples(tmp_path, capsys):
    eye = write_rows(tmp_path / "eye.csv", np.eye(4))
    const = write_rows(tmp_path / "const.csv", np.ones((4, 3)))
    code, out = run(["estimate", eye, eye], capsys)
    assert code == 0
    lines = dict(line.split(" = ") for line in out.out.strip().splitlines())
    assert float(lines["I_2(Z1;Z2)"]) == pytest.approx(math.log(4), abs=1e-9)
    code, out = run(["estimate", eye, const], capsys)
    lines = dict(line.split(" = ") for line in out.out.strip().splitlines())
    assert float(lines["I_2(Z1;Z2)"]) == pytest.approx(0.0, abs=1e-12)


def test_estimate_matches_library(tmp_path, capsys):
    r = np.random.default_rng(4)
    z1, z2 = r.normal(size=(10, 5)), r.normal(size=(10, 3))
    a = write_rows(tmp_path / "a.csv", z1)
    b = write_rows(tmp_path / "b.csv", z2)
    code, out = run(["estimate", a, b, "--alpha", "3"], capsys)
    assert code == 0
    z1, z2 = np.loadtxt(a, delimiter=","), np.loadtxt(b, delimiter=",")
    expect = matrix_info.matrix_mi(matrix_info.feature_kernel(z1), matrix_info.feature_kernel(z2), 3.0)
    assert out.out.strip().splitlines()[2] == f"I_3(Z1;Z2) = {expect:.12g}"


def test_estimate_io_errors(tmp_path):
    a = write_rows(tmp_path / "a.csv", np.eye(4))
    b = write_rows(tmp_path / "b.csv", np.eye(3))
    assert cli.main(["estimate", a, b]) == 1
    assert cli.main(["estimate", a, str(tmp_path / "missing.csv")]) == 1
    (tmp_path / "bad.csv").write_text("1,x\n")
    assert cli.main(["estimate", a, str(tmp_path / "bad.csv")]) == 1


def test_train_zero_epochs_header_only(tmp_path):
    cfg = tmp_path / "z.json"
    cfg.write_text('{"epochs": 0}')
    assert cli.main(["train", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "runlog.csv").read_text() == ",".join(train_harness.RUNLOG_COLUMNS) + "\n"


def test_train_byte_identical_and_meta_round_trip(tmp_path, small_config):
    out = tmp_path / "o"
    assert cli.main(["train", small_config, "--out", str(out)]) == 0
    log1 = (out / "runlog.csv").read_bytes()
    meta1 = (out / "run_meta.json").read_bytes()
    assert cli.main(["train", small_config, "--out", str(out)]) == 1
    assert cli.main(["train", small_config, "--out", str(out), "--force"]) == 0
    assert (out / "runlog.csv").read_bytes() == log1
    assert (out / "run_meta.json").read_bytes() == meta1
    meta = json.loads(meta1)
    assert meta["lr"] == train_harness.TrainConfig().lr  # defaulted fields are echoed
    out2 = tmp_path / "o2"
    assert cli.main(["train", str(out / "run_meta.json"), "--out", str(out2)]) == 0
    assert (out2 / "runlog.csv").read_bytes() == log1


def test_train_config_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"objective": "mse"}')
    assert cli.main(["train", str(bad), "--out", str(tmp_path)]) == 1
    bad.write_text("{not json")
    assert cli.main(["train", str(bad), "--out", str(tmp_path)]) == 1
    assert cli.main(["train", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 1


def test_train_divergence_exit_3(tmp_path):
    cfg = tmp_path / "d.json"
    cfg.write_text(json.dumps({**SMALL, "objective": "supervised", "lr": 1e10, "epochs": 4}))
    assert cli.main(["train", str(cfg), "--out", str(tmp_path)]) == 3
    assert (tmp_path / "runlog.csv").exists()


def test_sweep_single_value_equals_train(tmp_path, small_config):
    assert cli.main(["train", small_config, "--out", str(tmp_path / "t")]) == 0
    assert cli.main(["sweep", small_config, "--axis", "lambda", "--values", "0", "--out", str(tmp_path / "s")]) == 0
    final = (tmp_path / "t" / "runlog.csv").read_text().strip().splitlines()[-1]
    row = (tmp_path / "s" / "sweep.csv").read_text().strip().splitlines()[1]
    assert row.split(",", 3)[3] == final
    corr = json.loads((tmp_path / "s" / "correlations.json").read_text())
    assert corr["n_runs"] == 1 and "note" in corr


def test_sweep_rows_and_worker_independence(tmp_path, small_config):
    cfg = json.loads(open(small_config).read())
    cfg["epochs"] = 1
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    values = "0,1e-4,1e-3,0.01,0.05,0.1"
    base = ["sweep", str(path), "--axis", "lambda", "--values", values, "--seeds", "2"]
    assert cli.main(base + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(base + ["--out", str(tmp_path / "b"), "--workers", "3"]) == 0
    a = (tmp_path / "a" / "sweep.csv").read_bytes()
    assert a == (tmp_path / "b" / "sweep.csv").read_bytes()
    assert len(a.splitlines()) == 1 + 12
    corr = json.loads((tmp_path / "a" / "correlations.json").read_text())
    assert corr["n_runs"] == 12
    assert set(corr) >= {"spearman_lower_bound_vs_acc", "spearman_upper_bound_vs_acc", "spearman_i2_z1_z2_vs_acc"}


def test_sweep_fsq_levels_curve(tmp_path, small_config):
    argv = ["sweep", small_config, "--axis", "fsq_levels", "--values", "5,7,10", "--out", str(tmp_path)]
    assert cli.main(argv) == 0
    rows = list(csv.DictReader(open(tmp_path / "sweep.csv")))
    assert [r["axis_value"] for r in rows] == ["5", "7", "10"]


@pytest.mark.slow
def test_sample_config_trains(tmp_path):
    import pathlib
    import time

    cfg = pathlib.Path(__file__).resolve().parents[1] / "configs" / "infonce_fsq.json"
    t0 = time.perf_counter()
    assert cli.main(["train", str(cfg), "--out", str(tmp_path)]) == 0
    assert time.perf_counter() - t0 < 60
    final = train_harness.RunLog.from_csv((tmp_path / "runlog.csv").read_text()).final
    assert final["probe_acc_z1"] >= 0.8
