import csv
import math

import numpy as np
import pytest

import swarmsense.active_sensing as asense
from swarmsense.experiment import (PAIRED_HEADER, ExperimentConfig, RunFailure, compare, format_table,
                                   load_run, read_csv, recompute_metrics, run_experiment, summary_rows)
from swarmsense.metrics import student_t_ci
from swarmsense.simulation import MissionConfig

QUICK = dict(time_limit=90.0, n_particles=40)


def quick(mode="cpp-as", **kw):
    return MissionConfig(mode=mode, **{**QUICK, **kw})


def test_mission_config_round_trip_and_validation():
    cfg = quick(quota=12)
    assert MissionConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        MissionConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        MissionConfig(mode="fly")


def test_experiment_config_reps():
    with pytest.raises(ValueError):
        ExperimentConfig(reps=0)
    assert ExperimentConfig(reps=3, seed_base=5).seeds == [5, 6, 7]


def test_run_experiment_writes_every_run(tmp_path):
    recs, rows = run_experiment(ExperimentConfig("lab", quick(), reps=2, seed_base=3, out=str(tmp_path)))
    assert [r.seed for r in recs] == [3, 4]
    for seed in (3, 4):
        d = tmp_path / f"run_{seed:03d}"
        for name in ("config.json", "scenario.json", "state.csv", "estimates.csv", "modes.csv",
                     "decisions.csv", "collisions.csv", "run.json", "summary.csv", "waypoints.csv", "grid.pbm"):
            assert (d / name).exists(), name
    header, body = read_csv(tmp_path / "summary.csv")
    assert header == ["metric", "mean", "ci95", "n"]
    got = {r[0]: r for r in body}
    vals = [r.summary["final_mse"] for r in recs]
    m, h = student_t_ci(vals)
    assert float(got["final_mse"][1]) == m and float(got["final_mse"][2]) == h
    assert (tmp_path / "summary.txt").read_text().startswith("metric")


def test_same_config_gives_identical_files(tmp_path):
    for sub in ("a", "b"):
        run_experiment(ExperimentConfig("lab", quick("as-only"), reps=1, out=str(tmp_path / sub)))
    for name in ("summary.csv", "run_000/state.csv", "run_000/estimates.csv", "run_000/decisions.csv",
                 "run_000/summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_metrics_replay_exactly_from_logs(tmp_path):
    recs, _ = run_experiment(ExperimentConfig("lab", quick(), reps=1, out=str(tmp_path)))
    again = recompute_metrics(tmp_path / "run_000")
    for k, v in recs[0].summary.items():
        if isinstance(v, float) and math.isnan(v):
            assert math.isnan(again[k])
        else:
            assert again[k] == v, k


def test_state_log_is_complete(tmp_path):
    run_experiment(ExperimentConfig("lab", quick(time_limit=20.0), reps=1, out=str(tmp_path)))
    logs = load_run(tmp_path / "run_000")
    ticks = {float(r[0]) for r in logs["state"]}
    assert len(logs["state"]) == 3 * len(ticks)
    assert max(ticks) == pytest.approx(20.0)


def test_failure_keeps_partial_logs(tmp_path, monkeypatch):
    calls = {"n": 0}
    real = asense.select_waypoint

    def flaky(*a, **k):
        calls["n"] += 1
        if calls["n"] > 6:
            raise FloatingPointError("boom")
        return real(*a, **k)

    monkeypatch.setattr(asense, "select_waypoint", flaky)
    with pytest.raises(RunFailure) as err:
        run_experiment(ExperimentConfig("lab", quick("as-only"), reps=1, out=str(tmp_path)))
    d = tmp_path / "run_000"
    assert err.value.run_dir == d
    assert "boom" in (d / "error.txt").read_text()
    _, state = read_csv(d / "state.csv")
    _, est = read_csv(d / "estimates.csv")
    assert state and len(est) > 3


def _hand_merged_curve(run_dir, times):
    """Agent-mean of each agent's most recent logged MSE, straight from estimates.csv."""
    latest = {}
    with open(run_dir / "estimates.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for t in times:
        for r in rows:
            if float(r["t"]) <= t:
                latest[int(r["agent"])] = float(r["mse"])
        out.append(sum(latest.values()) / len(latest))
    return out


def test_compare_paired_table_matches_hand_merge(tmp_path):
    cfg = ExperimentConfig("lab", quick(), reps=2, out=str(tmp_path))
    compare(cfg, step=30.0)
    header, rows = read_csv(tmp_path / "paired.csv")
    assert tuple(header) == PAIRED_HEADER
    for seed in (0, 1):
        mine = [r for r in rows if int(r[1]) == seed]
        times = [float(r[0]) for r in mine]
        a = _hand_merged_curve(tmp_path / "cpp-as" / f"run_{seed:03d}", times)
        b = _hand_merged_curve(tmp_path / "as-only" / f"run_{seed:03d}", times)
        assert np.allclose([float(r[2]) for r in mine], a, rtol=0, atol=1e-12)
        assert np.allclose([float(r[3]) for r in mine], b, rtol=0, atol=1e-12)
        assert np.allclose([float(r[4]) for r in mine], np.subtract(a, b), rtol=0, atol=1e-12)
    _, summ = read_csv(tmp_path / "paired_summary.csv")
    assert len(summ) == len(rows) // 2


def test_summary_rows_and_table():
    rows = summary_rows([{"final_mse": 0.1, "epochs": 3}, {"final_mse": 0.3, "epochs": 5}])
    assert rows[0][0] == "final_mse" and rows[0][1] == pytest.approx(0.2) and rows[0][3] == 2
    text = format_table(("metric", "mean", "ci95", "n"), rows)
    lines = text.splitlines()
    assert len(lines) == 2 + len(rows) and set(lines[1]) <= {"-", " "}
    assert len({len(l) for l in lines}) == 1
