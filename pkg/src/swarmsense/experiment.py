"""Repeated missions, on-disk logs, summary tables and paired comparisons.

Layout of an experiment directory::

    summary.csv, summary.txt        metric, mean, ci95, n over repetitions
    run_<seed>/
        config.json                 mission settings and scenario name
        scenario.json               the scenario as simulated
        state.csv                   t, robot, x, y, theta, v, omega, mode (every tick)
        estimates.csv               epoch, t, agent, mse, g0..g{I-1}, noise_var
        modes.csv                   t, from, to, event
        decisions.csv               epoch, agent, cand_x, cand_y, reward, explored, chosen_x, chosen_y
        collisions.csv              t, robot, other, gap
        run.json                    end time, epochs, min gap, coverage end, footprint
        summary.csv                 metric, value
        waypoints.csv, grid.pbm     coverage plan (coverage modes only)
        error.txt                   traceback when a run failed part way

Floats are written with ``repr`` so that re-reading a log gives back the
exact values that produced the summary.
"""
from __future__ import annotations

import csv
import json
import math
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .active_sensing import DECISION_HEADER
from .coverage import export_waypoints_csv, rasterize
from .metrics import student_t_ci
from .mission import MODE_LOG_HEADER
from .scenarios import resolve_scenario, save_scenario, scenario_from_dict
from .simulation import (MissionConfig, RunRecord, build_plan, mse_by_agent, run_mission, summarize_run,
                         trajectories_from_rows)
from .world import STATE_HEADER

COLLISION_HEADER = ("t", "robot", "other", "gap")
SUMMARY_METRICS = ("anmse_count", "final_mse", "source_error", "whca", "coverage", "coverage_direct",
                   "coverage_indirect", "path_length", "collisions", "min_gap", "cpp_end", "end_time", "epochs")


class RunFailure(RuntimeError):
    """A mission raised; partial logs were written to ``run_dir``."""

    def __init__(self, run_dir, cause):
        super().__init__(f"run failed ({cause!r}); partial logs in {run_dir}")
        self.run_dir = run_dir
        self.cause = cause


@dataclass
class ExperimentConfig:
    scenario: str = "lab"          # builtin name or JSON path
    mission: MissionConfig = field(default_factory=MissionConfig)
    reps: int = 1
    seed_base: int = 0
    out: str | None = None

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")

    @property
    def seeds(self) -> list[int]:
        return list(range(self.seed_base, self.seed_base + self.reps))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_csv(path) -> tuple[list, list]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def write_run(rec: RunRecord, scenario, cfg: MissionConfig, run_dir) -> None:
    d = Path(run_dir)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "config.json", "w") as fh:
        json.dump({"scenario": scenario.name, "seed": rec.seed, "mission": cfg.to_dict()}, fh,
                  indent=2, sort_keys=True, default=_json_default)
    save_scenario(scenario, d / "scenario.json")
    write_csv(d / "state.csv", STATE_HEADER, rec.state_rows)
    n_basis = (len(rec.estimates[0]) - 5) if rec.estimates else 0
    est_header = ("epoch", "t", "agent", "mse", *[f"g{k}" for k in range(n_basis)], "noise_var")
    write_csv(d / "estimates.csv", est_header, rec.estimates)
    write_csv(d / "modes.csv", MODE_LOG_HEADER, rec.mode_changes)
    write_csv(d / "decisions.csv", DECISION_HEADER, rec.decisions)
    write_csv(d / "collisions.csv", COLLISION_HEADER, rec.collisions)
    with open(d / "run.json", "w") as fh:
        json.dump({k: _clean(v) for k, v in rec.meta().items()}, fh, indent=2, sort_keys=True,
                  default=_json_default)
    if rec.plan is not None:
        with open(d / "waypoints.csv", "w") as fh:
            export_waypoints_csv(rec.plan, fh)
        (d / "grid.pbm").write_text(rec.plan.grid.to_text())
    if rec.summary:
        write_csv(d / "summary.csv", ("metric", "value"), sorted(rec.summary.items()))


def load_run(run_dir) -> dict:
    """Read back the logs of one run directory."""
    d = Path(run_dir)
    cfg_doc = json.loads((d / "config.json").read_text())
    scenario = scenario_from_dict(json.loads((d / "scenario.json").read_text()))
    cfg = MissionConfig.from_dict(cfg_doc["mission"])
    _, state = read_csv(d / "state.csv")
    _, est = read_csv(d / "estimates.csv")
    _, col = read_csv(d / "collisions.csv")
    est = [(int(r[0]), float(r[1]), int(r[2]), *[float(v) for v in r[3:]]) for r in est]
    meta = json.loads((d / "run.json").read_text())
    if meta.get("min_gap") is None:
        meta["min_gap"] = math.inf
    return {"scenario": scenario, "config": cfg, "seed": cfg_doc["seed"], "state": state,
            "estimates": est, "collisions": col, "meta": meta}


def recompute_metrics(run_dir) -> dict:
    """Summary of a run rebuilt from its log files alone."""
    logs = load_run(run_dir)
    scenario, cfg = logs["scenario"], logs["config"]
    grid = None
    if cfg.mode != "as-only":
        grid = build_plan(scenario, cfg).grid if cfg.cell_size is None else rasterize(scenario, cfg.cell_size)
    traj = trajectories_from_rows(logs["state"], len(scenario.robots))
    return summarize_run(scenario, cfg, logs["estimates"], traj, logs["collisions"], logs["meta"], grid)


def summary_rows(summaries: list[dict]) -> list[tuple]:
    rows = []
    keys = [k for k in SUMMARY_METRICS if any(k in s for s in summaries)]
    for k in keys:
        vals = [s.get(k, float("nan")) for s in summaries]
        mean, hw = student_t_ci(vals)
        rows.append((k, mean, hw, int(np.isfinite(np.asarray(vals, float)).sum())))
    return rows


def format_table(header, rows, digits: int = 4) -> str:
    def cell(v):
        if isinstance(v, float):
            return "nan" if math.isnan(v) else f"{v:.{digits}f}"
        return str(v)

    text = [[str(h) for h in header]] + [[cell(v) for v in r] for r in rows]
    widths = [max(len(r[c]) for r in text) for c in range(len(header))]
    lines = ["  ".join(v.rjust(w) if j else v.ljust(w) for j, (v, w) in enumerate(zip(r, widths))) for r in text]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_summary(out_dir, rows) -> str:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = ("metric", "mean", "ci95", "n")
    write_csv(out / "summary.csv", header, rows)
    table = format_table(header, rows)
    (out / "summary.txt").write_text(table)
    return table


def run_experiment(config: ExperimentConfig, progress=None) -> tuple[list[RunRecord], list[tuple]]:
    """Run every repetition, write logs when ``config.out`` is set and return the summary rows."""
    records = []
    for seed in config.seeds:
        scenario = resolve_scenario(config.scenario, seed)
        rec = RunRecord(scenario.name, config.mission.mode, seed)
        run_dir = None if config.out is None else Path(config.out) / f"run_{seed:03d}"
        try:
            run_mission(scenario, config.mission, seed=seed, record=rec)
        except Exception as exc:
            if run_dir is not None:
                write_run(rec, scenario, config.mission, run_dir)
                (Path(run_dir) / "error.txt").write_text(traceback.format_exc())
            raise RunFailure(run_dir, exc) from exc
        if run_dir is not None:
            write_run(rec, scenario, config.mission, run_dir)
        records.append(rec)
        if progress is not None:
            progress(seed, rec)
    rows = summary_rows([r.summary for r in records])
    if config.out is not None:
        write_summary(config.out, rows)
    return records, rows


def curve_times(records, step: float = 60.0) -> np.ndarray:
    end = max(r.end_time for r in records)
    return np.arange(0.0, end + 1e-9, step)


def paired_curves(cpp_records, as_records, step: float = 60.0) -> tuple[list, list]:
    """Per-seed and aggregated ANMSE-at-time tables for two matched sets of runs.

    Both inputs must hold runs for the same seeds in the same order.
    Returns ``(per_seed_rows, summary_rows)``.
    """
    if [r.seed for r in cpp_records] != [r.seed for r in as_records]:
        raise ValueError("comparison needs the same seeds for both modes")
    times = curve_times(list(cpp_records) + list(as_records), step)
    per_seed, a_all, b_all = [], [], []
    for ra, rb in zip(cpp_records, as_records):
        a, b = ra.mse_curve(times), rb.mse_curve(times)
        a_all.append(a)
        b_all.append(b)
        per_seed.extend((float(t), ra.seed, float(x), float(y), float(x - y)) for t, x, y in zip(times, a, b))
    a_all, b_all = np.array(a_all), np.array(b_all)
    summary = []
    for k, t in enumerate(times):
        ma, ha = student_t_ci(a_all[:, k])
        mb, hb = student_t_ci(b_all[:, k])
        md, hd = student_t_ci(a_all[:, k] - b_all[:, k])
        summary.append((float(t), ma, ha, mb, hb, md, hd))
    return per_seed, summary


PAIRED_HEADER = ("t", "seed", "cpp_as", "as_only", "diff")
PAIRED_SUMMARY_HEADER = ("t", "cpp_as", "cpp_as_ci95", "as_only", "as_only_ci95", "diff", "diff_ci95")


def compare(config: ExperimentConfig, step: float = 60.0, progress=None):
    """Run CPP-AS and AS-only over the same seeds and tabulate ANMSE against time."""
    out = None if config.out is None else Path(config.out)
    recs = {}
    for mode in ("cpp-as", "as-only"):
        mission = MissionConfig.from_dict({**config.mission.to_dict(), "mode": mode})
        sub = ExperimentConfig(config.scenario, mission, config.reps, config.seed_base,
                               None if out is None else str(out / mode))
        recs[mode], _ = run_experiment(sub, progress)
    per_seed, summary = paired_curves(recs["cpp-as"], recs["as-only"], step)
    if out is not None:
        write_csv(out / "paired.csv", PAIRED_HEADER, per_seed)
        write_csv(out / "paired_summary.csv", PAIRED_SUMMARY_HEADER, summary)
        (out / "paired_summary.txt").write_text(format_table(PAIRED_SUMMARY_HEADER, summary))
    return recs, per_seed, summary


def mse_table(records) -> list[tuple]:
    """Flat (seed, agent, t, mse) rows, handy for merging runs by hand."""
    rows = []
    for r in records:
        for agent, series in sorted(mse_by_agent(r.estimates).items()):
            rows.extend((r.seed, agent, t, m) for t, m in series)
    return rows
