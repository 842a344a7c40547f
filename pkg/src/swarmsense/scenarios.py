"""Built-in scenarios and the JSON scenario format.

Scenario JSON schema (all lengths in metres, angles in radians)::

    {
      "name": "lab",
      "arena": [xmin, ymin, xmax, ymax],
      "robots": [[x, y, heading], ...],
      "static_obstacles": [[[x, y], ...], ...],      # known; rasterized for planning
      "unknown_obstacles": [[[x, y], ...], ...],     # optional; LiDAR only
      "movers": [{"path": [[x, y], ...], "speed": 0.5, "radius": 0.3}],
      "source": {"type": "synthetic", "field": {"layout": {"centers": [...],
                 "widths": [...]}, "gains": [...], "noise_std": s, "threshold": t}}
             or {"type": "rssi", "emitter": [x, y], "p0": 50, "d0": 1,
                 "exponent": 2.2, "noise_std": 2, "clamp": [15, 50],
                 "window": 5, "threshold": 35, "sample_period": 1},
      "comm_radius": 3.0, "dt": 0.1, "seed": 0, "robot_radius": 0.25,
      "start": [x, y],                 # optional, defaults to the robots' centroid
      "basis_count": 16, "basis_width": null,
      "true_source": [x, y],           # optional
      "mission": {...}                 # optional MissionConfig overrides
    }
"""
from __future__ import annotations

import json
import math

import numpy as np

from .field import BasisLayout, GasFieldSpec
from .geometry import Rect, rect_vertices
from .world import MoverSpec, RssiModel, SyntheticField, WorldScenario

LAB_ARENA = Rect.from_size(14.98, 28.12)
LAB_START = (10.559, 21.77)
RADIO_SOURCE = (6.73, 12.80)


class ScenarioError(ValueError):
    """Malformed scenario document; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def lab_truth_field() -> GasFieldSpec:
    layout = BasisLayout([[1.6, 20.0], [12.8, 3.3], [1.6, 2.7]], [7.7, 6.0, 7.7])
    return GasFieldSpec(layout, [1.6, 1.4, 1.6], math.sqrt(0.32), 1.0)


def c_shaped_obstacles() -> list[np.ndarray]:
    """Four bars forming a C that opens toward the west, lower-left of the arena."""
    return [
        rect_vertices(3.6, 5.4, 7.2, 6.0),
        rect_vertices(3.6, 8.6, 7.2, 9.2),
        rect_vertices(6.6, 6.0, 7.2, 7.3),
        rect_vertices(6.6, 7.3, 7.2, 8.6),
    ]


def table_obstacle() -> np.ndarray:
    x, y = RADIO_SOURCE
    return rect_vertices(x - 0.6, y - 0.4, x + 0.6, y + 0.4)


def _start_poses(n: int, start, spacing: float = 1.0, heading: float = -math.pi / 2) -> np.ndarray:
    """Robots packed in rows behind ``start``, facing ``heading``."""
    per_row = max(1, math.ceil(math.sqrt(n)))
    poses = []
    for k in range(n):
        r, c = divmod(k, per_row)
        dx = (c - (min(per_row, n - r * per_row) - 1) / 2) * spacing
        poses.append([start[0] + dx, start[1] + r * spacing, heading])
    return np.array(poses)


def lab_scenario(seed: int = 0, n_robots: int = 3) -> WorldScenario:
    """Synthetic three-source field in the 14.98 x 28.12 m arena."""
    mover = MoverSpec([[8.6, 14.2], [12.6, 14.2], [12.6, 17.6], [8.6, 17.6]], speed=0.5, radius=0.3)
    return WorldScenario(
        name="lab",
        arena=LAB_ARENA,
        robots=_start_poses(n_robots, LAB_START),
        source=SyntheticField(lab_truth_field()),
        static_obstacles=c_shaped_obstacles(),
        unknown_obstacles=[table_obstacle()],
        movers=[mover],
        seed=seed,
        start=np.array(LAB_START),
        true_source=np.array([1.6, 20.0]),
    )


def rssi_scenario(seed: int = 0, n_robots: int = 3) -> WorldScenario:
    """Same arena with a radio emitter standing in for the gas source."""
    sc = lab_scenario(seed, n_robots)
    sc.name = "rssi"
    sc.source = RssiModel(np.array(RADIO_SOURCE))
    sc.true_source = np.array(RADIO_SOURCE)
    return sc


def crowd_scenario(which: int, seed: int = 0) -> WorldScenario:
    """Crowded variants: 1 = five robots, 2 static + 2 moving obstacles;
    2 = nine robots, 3 static + 3 moving obstacles."""
    if which == 1:
        n, statics = 5, [rect_vertices(3.0, 5.0, 6.0, 8.0), rect_vertices(9.0, 9.5, 11.5, 11.5)]
        movers = [
            MoverSpec([[8.0, 14.0], [12.5, 14.0], [12.5, 17.0], [8.0, 17.0]]),
            MoverSpec([[2.0, 12.0], [6.0, 12.0], [6.0, 16.0], [2.0, 16.0]]),
        ]
    elif which == 2:
        n = 9
        statics = [rect_vertices(3.0, 5.0, 6.0, 8.0), rect_vertices(9.0, 9.5, 11.5, 11.5),
                   rect_vertices(2.0, 22.0, 4.5, 24.0)]
        movers = [
            MoverSpec([[8.0, 14.0], [12.5, 14.0], [12.5, 17.0], [8.0, 17.0]]),
            MoverSpec([[2.0, 12.0], [6.0, 12.0], [6.0, 16.0], [2.0, 16.0]]),
            MoverSpec([[7.5, 2.0], [13.0, 2.0]], speed=0.4),
        ]
    else:
        raise ValueError("crowd scenario is 1 or 2")
    return WorldScenario(
        name=f"crowd{which}",
        arena=LAB_ARENA,
        robots=_start_poses(n, LAB_START),
        source=SyntheticField(lab_truth_field()),
        static_obstacles=statics,
        movers=movers,
        seed=seed,
        start=np.array(LAB_START),
        true_source=np.array([1.6, 20.0]),
    )


BUILTIN = {
    "lab": lab_scenario,
    "rssi": rssi_scenario,
    "crowd1": lambda seed=0: crowd_scenario(1, seed),
    "crowd2": lambda seed=0: crowd_scenario(2, seed),
}


def builtin(name: str, seed: int = 0) -> WorldScenario:
    try:
        return BUILTIN[name](seed=seed)
    except KeyError:
        raise ScenarioError("scenario", f"unknown built-in {name!r}; choose from {sorted(BUILTIN)}") from None


# ------------------------------------------------------------------- JSON


def scenario_to_dict(sc: WorldScenario) -> dict:
    if isinstance(sc.source, SyntheticField):
        source = {"type": "synthetic", "field": sc.source.spec.to_dict()}
    else:
        m = sc.source
        source = {"type": "rssi", "emitter": m.emitter.tolist(), "p0": m.p0, "d0": m.d0,
                  "exponent": m.exponent, "noise_std": m.noise_std, "clamp": list(m.clamp),
                  "window": m.window, "threshold": m.threshold, "sample_period": m.sample_period}
    return {
        "name": sc.name,
        "arena": sc.arena.to_list(),
        "robots": sc.robots.tolist(),
        "static_obstacles": [p.tolist() for p in sc.static_obstacles],
        "unknown_obstacles": [p.tolist() for p in sc.unknown_obstacles],
        "movers": [{"path": m.path.tolist(), "speed": m.speed, "radius": m.radius} for m in sc.movers],
        "source": source,
        "comm_radius": sc.comm_radius,
        "dt": sc.dt,
        "seed": sc.seed,
        "robot_radius": sc.robot_radius,
        "start": sc.start.tolist(),
        "basis_count": sc.basis_count,
        "basis_width": sc.basis_width,
        "true_source": None if sc.true_source is None else sc.true_source.tolist(),
        "mission": dict(sc.mission),
    }


def _req(d: dict, key: str, path: str):
    if key not in d:
        raise ScenarioError(f"{path}.{key}" if path else key, "missing required field")
    return d[key]


def _points(value, path: str, width: int = 2) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError(path, "expected a list of numeric points") from None
    if arr.ndim != 2 or arr.shape[1] != width or not np.all(np.isfinite(arr)):
        raise ScenarioError(path, f"expected rows of {width} finite numbers")
    return arr


def scenario_from_dict(d: dict) -> WorldScenario:
    if not isinstance(d, dict):
        raise ScenarioError("<root>", "scenario must be a JSON object")
    arena = _req(d, "arena", "")
    if not (isinstance(arena, list) and len(arena) == 4):
        raise ScenarioError("arena", "expected [xmin, ymin, xmax, ymax]")
    arena = Rect(*map(float, arena))
    robots = _points(_req(d, "robots", ""), "robots", 3)
    statics = [_points(p, f"static_obstacles[{i}]") for i, p in enumerate(d.get("static_obstacles", []))]
    unknown = [_points(p, f"unknown_obstacles[{i}]") for i, p in enumerate(d.get("unknown_obstacles", []))]
    movers = []
    for i, m in enumerate(d.get("movers", [])):
        try:
            movers.append(MoverSpec(_points(_req(m, "path", f"movers[{i}]"), f"movers[{i}].path"),
                                    float(m.get("speed", 0.5)), float(m.get("radius", 0.3))))
        except ValueError as e:
            if isinstance(e, ScenarioError):
                raise
            raise ScenarioError(f"movers[{i}]", str(e)) from None
    src = _req(d, "source", "")
    kind = _req(src, "type", "source")
    try:
        if kind == "synthetic":
            source = SyntheticField(GasFieldSpec.from_dict(_req(src, "field", "source")))
        elif kind == "rssi":
            opts = {k: v for k, v in src.items() if k not in ("type", "emitter")}
            if "clamp" in opts:
                opts["clamp"] = tuple(opts["clamp"])
            source = RssiModel(np.asarray(_req(src, "emitter", "source"), float), **opts)
        else:
            raise ScenarioError("source.type", f"unknown source type {kind!r}")
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ScenarioError("source", str(e)) from None
    try:
        return WorldScenario(
            name=str(d.get("name", "custom")),
            arena=arena,
            robots=robots,
            source=source,
            static_obstacles=statics,
            unknown_obstacles=unknown,
            movers=movers,
            comm_radius=float(d.get("comm_radius", 3.0)),
            dt=float(d.get("dt", 0.1)),
            seed=int(d.get("seed", 0)),
            robot_radius=float(d.get("robot_radius", 0.25)),
            start=None if d.get("start") is None else np.asarray(d["start"], float),
            basis_count=int(d.get("basis_count", 16)),
            basis_width=None if d.get("basis_width") is None else float(d["basis_width"]),
            true_source=None if d.get("true_source") is None else np.asarray(d["true_source"], float),
            mission=dict(d.get("mission", {})),
        )
    except ValueError as e:
        raise ScenarioError("<root>", str(e)) from None


def load_scenario(path) -> WorldScenario:
    """Read a scenario file; errors name the JSON line or field at fault."""
    with open(path) as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"line {e.lineno}", e.msg) from None
    return scenario_from_dict(doc)


def save_scenario(sc: WorldScenario, path) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(sc), fh, indent=2)
        fh.write("\n")


def resolve_scenario(name_or_path: str, seed: int | None = None) -> WorldScenario:
    """Built-in scenario name or a path to a JSON file."""
    if name_or_path in BUILTIN:
        return builtin(name_or_path, 0 if seed is None else seed)
    sc = load_scenario(name_or_path)
    if seed is not None:
        sc.seed = seed
    return sc
