import json
from pathlib import Path

import numpy as np
import pytest

from gridveil.bench import report_from_json, summarize
from gridveil.cli import run
from gridveil.sampling import read_csv
from gridveil.surrogate import export_bundle, import_bundle

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="module")
def bundle_files(quick_bundles, tmp_path_factory):
    root = tmp_path_factory.mktemp("bundles")
    paths = []
    for ds, bundle in sorted(quick_bundles.items()):
        p = root / f"ds{ds}.json"
        export_bundle(bundle, p)
        paths.append(str(p))
    return paths


@pytest.fixture(scope="module")
def pp_solution_file(bundle_files, tmp_path_factory):
    out = tmp_path_factory.mktemp("sol") / "pp.json"
    args = ["solve", "--case", "ts30", "--mode", "pp", "--enforce-charts",
            "--out", str(out)]
    for b in bundle_files:
        args += ["--bundle", b]
    assert run(args) == 0
    return str(out)


# -------------------------------------------------------------- exit status


def test_help_matches_golden(capsys, monkeypatch):
    monkeypatch.setenv("COLUMNS", "80")
    assert run(["--help"]) == 0
    out = capsys.readouterr().out
    assert out == (GOLDEN / "cli_help.txt").read_text()


def test_usage_failures_exit_one(capsys):
    assert run([]) == 1
    assert run(["sample", "--case", "ds1", "--n", "5"]) == 1  # --seed missing
    assert run(["solve", "--case", "ts30", "--mode", "pp"]) == 1  # no bundles
    assert run(["sample", "--frobnicate"]) == 1
    assert run(["no-such-command"]) == 1
    err = capsys.readouterr().err
    assert "usage:" in err


def test_runtime_failures_exit_two(tmp_path, capsys):
    missing = str(tmp_path / "nope.csv")
    code = run(
        ["train-fr", "--data", missing, "--n-hidden", "2", "--seed", "0",
         "--out", str(tmp_path / "m.json")]
    )
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_version_exits_zero(capsys):
    assert run(["--version"]) == 0
    assert capsys.readouterr().out.startswith("gridveil ")


# ---------------------------------------------------------------- pipeline


@pytest.fixture(scope="module")
def tiny_artifacts(tmp_path_factory):
    """sample -> train-fr -> train-pq -> bundle on a small ds1 run."""
    root = tmp_path_factory.mktemp("pipeline")
    data = root / "ds1.csv"
    fr = root / "fr.json"
    pq = root / "pq.json"
    bundle = root / "bundle.json"
    assert run(["sample", "--case", "ds1", "--n", "400", "--seed", "11",
                "--out", str(data)]) == 0
    assert run(["train-fr", "--data", str(data), "--n-hidden", "8",
                "--seed", "3", "--epochs", "120", "--lr", "0.01",
                "--out", str(fr)]) == 0
    assert run(["train-pq", "--case", "ds1", "--data", str(data),
                "--out", str(pq)]) == 0
    assert run(["bundle", "--case", "ds1", "--fr", str(fr), "--pq", str(pq),
                "--dg-cost", "0.02,20", "--out", str(bundle)]) == 0
    return {"data": data, "fr": fr, "pq": pq, "bundle": bundle}


def test_sample_artifact(tiny_artifacts):
    ds = read_csv(tiny_artifacts["data"])
    assert ds.n == 400
    assert ds.meta["seed"] == 11
    assert ds.meta["case"] == "ds1"
    assert ds.meta["command"].startswith("gridveil sample ")
    assert "--seed 11" in ds.meta["command"]


def test_trained_artifacts_carry_provenance(tiny_artifacts):
    fr = json.loads(tiny_artifacts["fr"].read_text())
    assert fr["kind"] == "fr_polytope"
    assert len(fr["W"]) == 8
    assert fr["meta"]["command"].startswith("gridveil train-fr ")

    pq = json.loads(tiny_artifacts["pq"].read_text())
    assert pq["kind"] == "pcc_quadratics"
    assert len(pq["models"]) == 1
    assert pq["meta"]["rmse_p_1"] < 1e-2  # per unit

    bundle = import_bundle(tiny_artifacts["bundle"])
    assert bundle.ds_id == 1
    assert bundle.n_dg == 1
    assert bundle.costs[0].b == 20.0
    assert bundle.meta["command"].startswith("gridveil bundle ")


def test_bundle_rejects_duplicate_ds(tiny_artifacts, tmp_path, capsys):
    b = str(tiny_artifacts["bundle"])
    code = run(["solve", "--case", "ts30", "--mode", "pp",
                "--bundle", b, "--bundle", b, "--out", str(tmp_path / "s.json")])
    assert code == 1
    assert "duplicate" in capsys.readouterr().err


# ------------------------------------------------------------ solve / verify


def test_solve_standard_writes_solution(tmp_path, capsys):
    out = tmp_path / "std.json"
    case = Path(__file__).parent / "golden" / "two_bus.case"
    code = run(["solve", "--case", str(case), "--mode", "standard",
                "--out", str(out)])
    assert code == 0
    sol = json.loads(out.read_text())
    assert sol["kind"] == "opf_solution"
    assert sol["status"] == "optimal"
    assert "objective" in sol
    assert sol["meta"]["mode"] == "standard"
    assert "optimal" in capsys.readouterr().out


def test_solve_rejects_bundle_in_standard_mode(bundle_files, capsys):
    code = run(["solve", "--case", "ts30", "--mode", "standard",
                "--bundle", bundle_files[0]])
    assert code == 1


def test_solve_pp_and_verify(pp_solution_file, bundle_files, capsys, tmp_path):
    sol = json.loads(Path(pp_solution_file).read_text())
    assert sol["kind"] == "pp_solution"
    assert sol["status"] == "optimal"
    assert set(sol["x_ds"]) == {"1", "2", "3"}
    assert sol["meta"]["command"].startswith("gridveil solve ")

    rep_out = tmp_path / "verify.json"
    args = ["verify", "--ts", "ts30", "--solution", pp_solution_file,
            "--out", str(rep_out)]
    for ds in ("ds1", "ds2", "ds3"):
        args += ["--attach", ds]
    for b in bundle_files:
        args += ["--bundle", b]
    assert run(args) == 0
    out = capsys.readouterr().out
    assert "feasible" in out
    rep = json.loads(rep_out.read_text())
    assert rep["feasible_true"] is True
    assert rep["verified_cost"] > 0
    assert rep["pcc_flow_error"] < 1.0


def test_verify_rejects_standard_solution(tmp_path, bundle_files, capsys):
    out = tmp_path / "std.json"
    case = Path(__file__).parent / "golden" / "two_bus.case"
    assert run(["solve", "--case", str(case), "--mode", "standard",
                "--out", str(out)]) == 0
    args = ["verify", "--ts", "ts30", "--solution", str(out)]
    for ds in ("ds1", "ds2", "ds3"):
        args += ["--attach", ds]
    for b in bundle_files:
        args += ["--bundle", b]
    assert run(args) == 2


# ------------------------------------------------------------ bench / report


def test_bench_and_report_commands(bundle_files, tmp_path, capsys):
    rep = tmp_path / "bench.json"
    hist = tmp_path / "bench.csv"
    args = ["bench", "--ts", "ts30", "--trials", "1", "--seed", "5",
            "--out", str(rep), "--hist", str(hist)]
    for ds in ("ds1", "ds2", "ds3"):
        args += ["--attach", ds]
    for b in bundle_files:
        args += ["--bundle", b]
    assert run(args) == 0
    bench_out = capsys.readouterr().out
    assert "feasibility" in bench_out

    report = report_from_json(rep)
    assert report.meta["command"].startswith("gridveil bench ")
    assert summarize(report) == report.summary
    assert hist.read_text().startswith("metric,bin_lo,bin_hi,count")

    assert run(["report", "--in", str(rep)]) == 0
    report_out = capsys.readouterr().out
    assert "feasibility" in report_out
