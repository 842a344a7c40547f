"""Command line: ``swarmsense {plan,run,metrics,compare}``.

Exit codes: 0 success, 2 bad configuration or scenario, 3 failure during a run.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .coverage import export_waypoints_csv, plan_coverage, select_cell_size
from .experiment import (ExperimentConfig, RunFailure, compare, format_table, recompute_metrics,
                         run_experiment, summary_rows, write_csv)
from .scenarios import ScenarioError, resolve_scenario
from .simulation import MODES, MissionConfig

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class ConfigError(ValueError):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", default="lab", help="built-in name (lab, rssi, crowd1, crowd2) or JSON path")
    p.add_argument("--seed", type=int, default=0, help="seed of the first repetition")
    p.add_argument("--reps", type=int, default=1, help="repetitions, seeds seed..seed+reps-1")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--mode", choices=MODES, default="cpp-as")
    p.add_argument("--config", help="JSON file of mission settings")
    p.add_argument("--budget", type=float, help="coverage time budget (s); picks the cell size")
    p.add_argument("--cell-size", type=float, help="coverage grid cell size (m)")
    p.add_argument("--time-limit", type=float, help="simulated seconds before a run is cut off")
    p.add_argument("--quota", type=int, help="measurement epochs before the mission stops")
    p.add_argument("--particles", type=int, help="particles per robot")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="swarmsense", description="Swarm coverage and active sensing simulator")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("plan", help="compute and export the coverage plan")
    _common(p)
    p = sub.add_parser("run", help="simulate missions and summarise them")
    _common(p)
    p = sub.add_parser("metrics", help="recompute metrics from the logs under --out")
    _common(p)
    p = sub.add_parser("compare", help="paired CPP-AS vs AS-only ANMSE tables")
    _common(p)
    p.add_argument("--step", type=float, default=60.0, help="time step of the ANMSE table (s)")
    return ap


def mission_from_args(args, scenario) -> MissionConfig:
    """Defaults, then scenario overrides, then the --config file, then flags."""
    settings = dict(scenario.mission or {})
    if args.config:
        try:
            settings.update(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"--config: {e}") from None
    settings["mode"] = args.mode
    if args.budget is not None:
        settings.update(budget=args.budget, cell_size=None)
    if args.cell_size is not None:
        settings["cell_size"] = args.cell_size
    for flag, key in (("time_limit", "time_limit"), ("quota", "quota"), ("particles", "n_particles")):
        v = getattr(args, flag)
        if v is not None:
            settings[key] = v
    try:
        return MissionConfig.from_dict(settings)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def cmd_plan(args) -> int:
    scenario = resolve_scenario(args.scenario, args.seed)
    cfg = mission_from_args(args, scenario)
    over = False
    if cfg.cell_size is None:
        cs, plan, over = select_cell_size(scenario, cfg.budget, cfg.leader_speed,
                                          max_block_cells=cfg.max_block_cells or 1, formation_kind=cfg.formation)
    else:
        cs = cfg.cell_size
        plan = plan_coverage(scenario, cs, cfg.leader_speed, max_block_cells=cfg.max_block_cells,
                             formation_kind=cfg.formation)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "waypoints.csv", "w") as fh:
        export_waypoints_csv(plan, fh)
    (out / "grid.pbm").write_text(plan.grid.to_text())
    info = {"cell_size": cs, "grid": [plan.grid.rows, plan.grid.cols], "blocks": len(plan.blocks),
            "waypoints": len(plan.waypoints), "length": plan.length, "predicted_time": plan.predicted_time,
            "coverage_fraction": plan.coverage_fraction, "over_budget": bool(over or plan.over_budget),
            "tree_edges": [list(e) for e in plan.tree.edges]}
    (out / "plan.json").write_text(json.dumps(info, indent=2) + "\n")
    rows = [(k, v) for k, v in info.items() if k != "tree_edges"]
    print(format_table(("plan", "value"), rows), end="")
    return EXIT_OK


def _progress(seed, rec):
    print(f"seed {seed}: {rec.epochs} epochs, t={rec.end_time:.1f} s, collisions={len(rec.collisions)}",
          file=sys.stderr)


def cmd_run(args) -> int:
    scenario = resolve_scenario(args.scenario, args.seed)
    cfg = mission_from_args(args, scenario)
    exp = ExperimentConfig(args.scenario, cfg, args.reps, args.seed, args.out)
    _, rows = run_experiment(exp, _progress)
    print(format_table(("metric", "mean", "ci95", "n"), rows), end="")
    return EXIT_OK


def cmd_metrics(args) -> int:
    out = Path(args.out)
    runs = sorted(p.parent for p in out.glob("**/run.json"))
    if not runs:
        raise ConfigError(f"no run logs under {out}")
    summaries = []
    for d in runs:
        s = recompute_metrics(d)
        write_csv(d / "metrics.csv", ("metric", "value"), sorted(s.items()))
        summaries.append(s)
    table = format_table(("metric", "mean", "ci95", "n"), summary_rows(summaries))
    (out / "metrics.txt").write_text(table)
    print(table, end="")
    return EXIT_OK


def cmd_compare(args) -> int:
    scenario = resolve_scenario(args.scenario, args.seed)
    cfg = mission_from_args(args, scenario)
    exp = ExperimentConfig(args.scenario, cfg, args.reps, args.seed, args.out)
    _, _, summary = compare(exp, args.step, _progress)
    print(format_table(("t", "cpp_as", "ci95", "as_only", "ci95", "diff", "ci95"), summary), end="")
    return EXIT_OK


COMMANDS = {"plan": cmd_plan, "run": cmd_run, "metrics": cmd_metrics, "compare": cmd_compare}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.reps < 1:
            raise ConfigError("--reps must be at least 1")
        return COMMANDS[args.command](args)
    except (ScenarioError, ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except RunFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:  # noqa: BLE001 - anything else is a failure of the run itself
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
