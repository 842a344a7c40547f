"""Discrete-time 2-D world: unicycle robots, obstacles, LiDAR, radio bus, sensing."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import shapely

from .field import BinaryObservation, GasFieldSpec, binarize, sample_measurement
from .geometry import Rect, as_polygon, cast_rays, point_segment_distance, points_in_polygons, polygon_segments, rect_vertices

LIDAR_FOV = math.radians(270.0)
LIDAR_RES = math.radians(0.5)
LIDAR_MIN = 0.5
LIDAR_MAX = 20.0


@dataclass
class MoverSpec:
    """A scripted obstacle looping through ``path`` at constant speed."""

    path: np.ndarray
    speed: float = 0.5
    radius: float = 0.3

    def __post_init__(self):
        self.path = np.asarray(self.path, dtype=float).reshape(-1, 2)
        if len(self.path) < 1:
            raise ValueError("mover needs at least one waypoint")
        if self.speed < 0 or self.radius <= 0:
            raise ValueError("bad mover speed or radius")


@dataclass
class SyntheticField:
    spec: GasFieldSpec

    @property
    def threshold(self) -> float:
        return self.spec.threshold


@dataclass
class RssiModel:
    """Log-distance received signal strength with clamping and a moving average."""

    emitter: np.ndarray
    p0: float = 50.0            # dBm at d0
    d0: float = 1.0
    exponent: float = 2.2
    noise_std: float = 2.0
    clamp: tuple = (15.0, 50.0)
    window: int = 5
    threshold: float = 35.0
    sample_period: float = 1.0

    def __post_init__(self):
        self.emitter = np.asarray(self.emitter, dtype=float)
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not self.clamp[0] < self.clamp[1]:
            raise ValueError("clamp low must be below clamp high")

    def mean_rssi(self, point) -> float:
        d = max(float(np.linalg.norm(np.asarray(point, float) - self.emitter)), 1e-3)
        return self.p0 - 10.0 * self.exponent * math.log10(d / self.d0)

    def sample(self, point, rng) -> float:
        raw = self.mean_rssi(point) + self.noise_std * rng.standard_normal()
        return float(min(max(raw, self.clamp[0]), self.clamp[1]))


class MovingAverage:
    def __init__(self, window: int):
        self.buf: deque = deque(maxlen=window)

    def push(self, v: float) -> float:
        self.buf.append(float(v))
        return self.value

    @property
    def value(self) -> float:
        return sum(self.buf) / len(self.buf) if self.buf else float("nan")


@dataclass
class WorldScenario:
    name: str
    arena: Rect
    robots: np.ndarray                      # (n, 3) poses x, y, heading
    source: object                          # SyntheticField | RssiModel
    static_obstacles: list = field(default_factory=list)    # known, used for planning
    unknown_obstacles: list = field(default_factory=list)   # only seen by LiDAR
    movers: list = field(default_factory=list)
    comm_radius: float = 3.0
    dt: float = 0.1
    seed: int = 0
    robot_radius: float = 0.25
    start: np.ndarray | None = None
    basis_count: int = 16
    basis_width: float | None = None
    true_source: np.ndarray | None = None   # for source-error metrics
    mission: dict = field(default_factory=dict)

    def __post_init__(self):
        self.robots = np.asarray(self.robots, dtype=float).reshape(-1, 3)
        if self.dt <= 0 or self.comm_radius <= 0:
            raise ValueError("dt and comm_radius must be positive")
        if len(self.robots) < 1:
            raise ValueError("scenario needs at least one robot")
        self.static_obstacles = [np.asarray(p, float) for p in self.static_obstacles]
        self.unknown_obstacles = [np.asarray(p, float) for p in self.unknown_obstacles]
        if self.start is None:
            self.start = self.robots[:, :2].mean(axis=0)
        self.start = np.asarray(self.start, dtype=float)
        if self.true_source is not None:
            self.true_source = np.asarray(self.true_source, dtype=float)
        elif isinstance(self.source, RssiModel):
            self.true_source = self.source.emitter.copy()
        blocked = points_in_polygons(self.robots[:, :2], self.all_static)
        if blocked.any() or not self.arena.contains(self.robots[:, :2]).all():
            raise ValueError("robots must start in free space inside the arena")

    @property
    def all_static(self) -> list:
        return self.static_obstacles + self.unknown_obstacles

    @property
    def threshold(self) -> float:
        return self.source.threshold

    @property
    def synthetic(self) -> bool:
        return isinstance(self.source, SyntheticField)


@dataclass
class CommGraph:
    adjacency: np.ndarray      # (n, n) bool, symmetric, zero diagonal

    def neighbors(self, i: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.adjacency[i])]

    @classmethod
    def from_positions(cls, pos, radius: float) -> "CommGraph":
        pos = np.asarray(pos, float)
        d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        adj = d <= radius
        np.fill_diagonal(adj, False)
        return cls(adj)


@dataclass
class Message:
    time: float
    sender: int
    kind: str
    payload: object


@dataclass
class CollisionEvent:
    time: float
    robot: int
    other: str            # "static", "robot:<j>" or "mover:<k>"
    gap: float


class World:
    """Mutable world state advanced by :meth:`tick`."""

    def __init__(self, scenario: WorldScenario, seed: int | None = None):
        self.scenario = scenario
        self.dt = scenario.dt
        self.rng = np.random.default_rng(scenario.seed if seed is None else seed)
        self.t = 0.0
        self.steps = 0
        n = len(scenario.robots)
        self.n = n
        self.radius = scenario.robot_radius
        self.pos = scenario.robots[:, :2].copy()
        self.heading = scenario.robots[:, 2].copy()
        self.cmd_v = np.zeros(n)
        self.cmd_w = np.zeros(n)
        a = scenario.arena
        walls = [rect_vertices(a.xmin, a.ymin, a.xmax, a.ymax)]
        self.segments = np.concatenate([polygon_segments(scenario.all_static), polygon_segments(walls)])
        self.polygons = scenario.all_static
        self._solid = None
        if self.polygons:
            self._solid = shapely.union_all([as_polygon(v) for v in self.polygons])
            shapely.prepare(self._solid)
        self.movers = list(scenario.movers)
        self.mover_pos = np.array([m.path[0] for m in self.movers]).reshape(-1, 2)
        self.mover_target = np.array([1 % len(m.path) for m in self.movers], dtype=int)
        self.mover_radius = np.array([m.radius for m in self.movers])
        self.comm = CommGraph.from_positions(self.pos, scenario.comm_radius)
        self.inbox: list[list[Message]] = [[] for _ in range(n)]
        self._outgoing: list[Message] = []
        self.collisions: list[CollisionEvent] = []
        self._in_contact: set = set()
        self.min_gap = np.inf
        self.rssi_filters = [MovingAverage(scenario.source.window) for _ in range(n)] \
            if isinstance(scenario.source, RssiModel) else None
        self._next_rssi = 0.0
        if self.rssi_filters is not None:
            self._sample_rssi()

    # ------------------------------------------------------------- motion

    def set_command(self, i: int, v: float, w: float) -> None:
        self.cmd_v[i] = v
        self.cmd_w[i] = w

    def _advance_movers(self):
        dt = self.dt
        for k, m in enumerate(self.movers):
            if len(m.path) < 2 or m.speed == 0:
                continue
            p = self.mover_pos[k]
            goal = m.path[self.mover_target[k]]
            d = goal - p
            dist = float(np.hypot(*d))
            if dist < 1e-9:
                self.mover_target[k] = (self.mover_target[k] + 1) % len(m.path)
                continue
            direction = d / dist
            if self._mover_yields(k, direction):
                continue
            step = min(m.speed * dt, dist)
            new = p + direction * step
            if self._mover_hits_robot(k, new):
                continue
            self.mover_pos[k] = new
            if step >= dist - 1e-12:
                self.mover_target[k] = (self.mover_target[k] + 1) % len(m.path)

    def _mover_yields(self, k: int, direction) -> bool:
        # movers pause when a robot stands in their way
        rel = self.pos - self.mover_pos[k]
        ahead = rel @ direction
        lateral = np.abs(rel[:, 0] * direction[1] - rel[:, 1] * direction[0])
        half = self.mover_radius[k] + self.radius + 0.15
        return bool(np.any((ahead > 0) & (ahead < 1.2 + half) & (lateral < half)))

    def _mover_hits_robot(self, k: int, p) -> bool:
        d = np.linalg.norm(self.pos - p, axis=1)
        return bool(np.any(d < self.mover_radius[k] + self.radius))

    def tick(self) -> None:
        dt = self.dt
        self._advance_movers()
        old_pos = self.pos.copy()
        v = self.cmd_v
        th = self.heading
        new_pos = self.pos + np.column_stack([v * np.cos(th), v * np.sin(th)]) * dt
        self.heading = (self.heading + self.cmd_w * dt + np.pi) % (2 * np.pi) - np.pi
        self.pos = new_pos
        self._resolve_collisions(old_pos)
        self.t = round((self.steps + 1) * dt, 9)
        self.steps += 1
        self.comm = CommGraph.from_positions(self.pos, self.scenario.comm_radius)
        self._deliver()
        if self.rssi_filters is not None and self.t + 1e-9 >= self._next_rssi:
            self._sample_rssi()

    # --------------------------------------------------------- collisions

    def static_gaps(self, pos=None) -> np.ndarray:
        """Clearance between each robot body and the nearest static surface."""
        p = self.pos if pos is None else pos
        d = point_segment_distance(p, self.segments).min(axis=1) - self.radius
        if self._solid is not None:
            inside = shapely.intersects_xy(self._solid, p[:, 0], p[:, 1])
            d = np.where(inside, -self.radius, d)
        return d

    def _gaps(self, p):
        sg = self.static_gaps(p)
        dd = np.linalg.norm(p[:, None] - p[None], axis=-1) - 2 * self.radius
        np.fill_diagonal(dd, np.inf)
        dm = (np.linalg.norm(p[:, None] - self.mover_pos[None], axis=-1)
              - self.radius - self.mover_radius[None]) if len(self.movers) else np.zeros((len(p), 0))
        return sg, dd, dm

    def contacts(self, pos=None):
        """All current contacts as (robot, other, gap) with gap < 0."""
        p = self.pos if pos is None else pos
        return self._contacts(*self._gaps(p))

    def _contacts(self, sg, dd, dm):
        out = []
        for i in np.flatnonzero(sg < 0):
            out.append((int(i), "static", float(sg[i])))
        for i, j in zip(*np.nonzero(np.triu(dd < 0, 1))):
            out.append((int(i), f"robot:{j}", float(dd[i, j])))
        for i, k in zip(*np.nonzero(dm < 0)):
            out.append((int(i), f"mover:{k}", float(dm[i, k])))
        return out

    def clearances(self, pos=None) -> np.ndarray:
        """Per-robot smallest body gap to anything (static, robot or mover)."""
        sg, dd, dm = self._gaps(self.pos if pos is None else pos)
        g = np.minimum(sg, dd.min(axis=1))
        if dm.shape[1]:
            g = np.minimum(g, dm.min(axis=1))
        return g

    def _resolve_collisions(self, old_pos):
        sg, dd, dm = self._gaps(self.pos)
        g = np.minimum(sg, dd.min(axis=1))
        if dm.shape[1]:
            g = np.minimum(g, dm.min(axis=1))
        self.min_gap = min(self.min_gap, float(g.min()))
        now = set()
        for i, other, gap in self._contacts(sg, dd, dm):
            key = (i, other)
            now.add(key)
            if key not in self._in_contact:
                self.collisions.append(CollisionEvent(self.t + self.dt, i, other, gap))
            # halt: the offending step is undone
            self.pos[i] = old_pos[i]
            if other.startswith("robot:"):
                j = int(other.split(":")[1])
                self.pos[j] = old_pos[j]
        self._in_contact = now

    # ------------------------------------------------------------- LiDAR

    def lidar_angles(self, i: int) -> np.ndarray:
        n_beams = int(round(LIDAR_FOV / LIDAR_RES)) + 1
        return self.heading[i] + np.linspace(-LIDAR_FOV / 2, LIDAR_FOV / 2, n_beams)

    def _circles_for(self, i: int) -> np.ndarray:
        others = [np.r_[self.pos[j], self.radius] for j in range(self.n) if j != i]
        movers = [np.r_[self.mover_pos[k], self.mover_radius[k]] for k in range(len(self.movers))]
        rows = others + movers
        return np.array(rows).reshape(-1, 3)

    def lidar_scan(self, i: int, max_range: float = LIDAR_MAX):
        """``(angles, ranges)`` in world-frame angles; no return reads ``LIDAR_MAX``.

        With ``max_range`` below the sensor limit only surfaces inside that
        radius are considered, which is exact for every beam shorter than it.
        """
        ang = self.lidar_angles(i)
        segs = self.segments
        circles = self._circles_for(i)
        if max_range < LIDAR_MAX:
            near = point_segment_distance(self.pos[i], segs)[0] <= max_range
            segs = segs[near]
            if len(circles):
                cd = np.linalg.norm(circles[:, :2] - self.pos[i], axis=1) - circles[:, 2]
                circles = circles[cd <= max_range]
        r = cast_rays(self.pos[i], ang, segs, circles, max_range=min(max_range, LIDAR_MAX))
        r = np.where(np.isfinite(r), np.clip(r, LIDAR_MIN, LIDAR_MAX), LIDAR_MAX)
        return ang, r

    def nearest_surface(self) -> np.ndarray:
        """Distance from each robot centre to the nearest surface of anything."""
        d = point_segment_distance(self.pos, self.segments).min(axis=1)
        if self.n > 1:
            dd = np.linalg.norm(self.pos[:, None] - self.pos[None], axis=-1) - self.radius
            np.fill_diagonal(dd, np.inf)
            d = np.minimum(d, dd.min(axis=1))
        if len(self.movers):
            dm = np.linalg.norm(self.pos[:, None] - self.mover_pos[None], axis=-1) - self.mover_radius[None]
            d = np.minimum(d, dm.min(axis=1))
        return d

    # ------------------------------------------------------------ sensing

    def _sample_rssi(self):
        model = self.scenario.source
        for i in range(self.n):
            self.rssi_filters[i].push(model.sample(self.pos[i], self.rng))
        self._next_rssi = self.t + model.sample_period

    def sense(self, i: int) -> tuple[BinaryObservation, float]:
        """Binary reading at robot ``i`` plus the underlying analogue value."""
        src = self.scenario.source
        loc = self.pos[i].copy()
        if isinstance(src, SyntheticField):
            y = sample_measurement(src.spec, loc, self.rng)
            bit = binarize(y, src.spec.threshold)
        else:
            y = self.rssi_filters[i].value
            bit = binarize(y, src.threshold)
        return BinaryObservation(loc, bit, time=self.t, agent_id=i), float(y)

    # ------------------------------------------------------------ messages

    def broadcast(self, sender: int, kind: str, payload) -> None:
        self._outgoing.append(Message(self.t, sender, kind, payload))

    def _deliver(self):
        out, self._outgoing = self._outgoing, []
        for msg in out:
            for j in self.comm.neighbors(msg.sender):
                self.inbox[j].append(msg)

    def drain(self, i: int, kind: str | None = None) -> list[Message]:
        if kind is None:
            msgs, self.inbox[i] = self.inbox[i], []
            return msgs
        keep, take = [], []
        for m in self.inbox[i]:
            (take if m.kind == kind else keep).append(m)
        self.inbox[i] = keep
        return take

    # ------------------------------------------------------------- logging

    def state_rows(self, modes=None):
        for i in range(self.n):
            mode = modes[i] if modes is not None else ""
            # repr keeps every float exact so metrics can be replayed from the log
            yield (repr(float(self.t)), i, repr(float(self.pos[i, 0])), repr(float(self.pos[i, 1])),
                   repr(float(self.heading[i])), repr(float(self.cmd_v[i])), repr(float(self.cmd_w[i])), mode)


STATE_HEADER = ("t", "robot", "x", "y", "theta", "v", "omega", "mode")
