import json

import pytest

import swarmsense.active_sensing as asense
from swarmsense.cli import main
from swarmsense.experiment import read_csv

QUICK = ["--time-limit", "60", "--particles", "30"]


def test_plan_writes_artifacts(tmp_path, capsys):
    assert main(["plan", "--out", str(tmp_path), "--cell-size", "1.5"]) == 0
    info = json.loads((tmp_path / "plan.json").read_text())
    assert info["cell_size"] == 1.5 and info["waypoints"] > 0
    header, rows = read_csv(tmp_path / "waypoints.csv")
    assert len(rows) == info["waypoints"]
    assert (tmp_path / "grid.pbm").read_text().startswith("P1")
    assert "predicted_time" in capsys.readouterr().out


def test_plan_budget_picks_cell(tmp_path):
    assert main(["plan", "--out", str(tmp_path), "--budget", "5000"]) == 0
    info = json.loads((tmp_path / "plan.json").read_text())
    assert info["predicted_time"] <= 5000 and not info["over_budget"]


def test_run_then_metrics(tmp_path, capsys):
    assert main(["run", "--out", str(tmp_path), "--reps", "2", *QUICK]) == 0
    run_out = capsys.readouterr().out
    assert "final_mse" in run_out
    assert main(["metrics", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "run_001" / "metrics.csv").exists()
    assert (tmp_path / "metrics.txt").read_text() == capsys.readouterr().out


def test_compare_command(tmp_path):
    assert main(["compare", "--out", str(tmp_path), "--step", "20", *QUICK]) == 0
    assert (tmp_path / "paired.csv").exists() and (tmp_path / "as-only" / "run_000").is_dir()


@pytest.mark.parametrize("argv", [
    ["plan", "--scenario", "atlantis"],
    ["run", "--reps", "0"],
    ["metrics"],
])
def test_configuration_errors_exit_2(tmp_path, argv, capsys):
    assert main([*argv, "--out", str(tmp_path)]) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_bad_config_files_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path)]) == 2
    bad.write_text(json.dumps({"warp_drive": True}))
    assert main(["run", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2


def test_runtime_failure_exits_3(tmp_path, monkeypatch, capsys):
    def broken(*a, **k):
        raise FloatingPointError("overflow")

    monkeypatch.setattr(asense, "select_waypoint", broken)
    assert main(["run", "--mode", "as-only", "--out", str(tmp_path), *QUICK]) == 3
    assert "overflow" in capsys.readouterr().err
    assert (tmp_path / "run_000" / "error.txt").exists()
