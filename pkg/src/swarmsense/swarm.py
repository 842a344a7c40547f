"""Flocking, obstacle avoidance and formation tracking for unicycle robots."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Rect, wrap_angle

LIDAR_NO_RETURN = 20.0


@dataclass
class FlockParams:
    w_cohesion: float = 0.6
    w_alignment: float = 0.5
    w_separation: float = 1.12
    w_wall: float = 1.0
    w_goal: float = 2.59
    w_avoid: float = 1.5
    r_alignment: float = 3.0
    r_separation: float = 0.95
    r_cohesion: float = 3.0
    r_avoid: float = 0.5
    wall_bounds: tuple = (0.5, 14.48, 0.5, 27.62)   # x_lo, x_hi, y_lo, y_hi
    max_speed: float = 0.15
    max_turn: float = 0.73
    decay: float = 0.95
    separation_cap: float = 10.0
    robot_radius: float = 0.25
    stop_clearance: float = 0.3      # body gap at which forward motion stops
    slow_distance: float = 0.5       # ramp length above the stop gap

    def __post_init__(self):
        if min(self.r_alignment, self.r_separation, self.r_cohesion, self.r_avoid) <= 0:
            raise ValueError("radii must be positive")
        if not self.r_separation < self.r_cohesion:
            raise ValueError("separation radius must be below cohesion radius")
        x0, x1, y0, y1 = self.wall_bounds
        if not (x0 < x1 and y0 < y1):
            raise ValueError("wall bounds must form a nonempty rectangle")

    @classmethod
    def for_arena(cls, arena: Rect, margin: float = 0.5, **kw) -> "FlockParams":
        bounds = (arena.xmin + margin, arena.xmax - margin, arena.ymin + margin, arena.ymax - margin)
        return cls(wall_bounds=bounds, **kw)

    @property
    def avoid_trigger(self) -> float:
        """Centre-to-surface range that counts as inside the avoidance radius."""
        return self.r_avoid + self.robot_radius

    @property
    def weights(self) -> dict:
        return {"cohesion": self.w_cohesion, "separation": self.w_separation,
                "alignment": self.w_alignment, "wall": self.w_wall,
                "goal": self.w_goal, "avoid": self.w_avoid}


@dataclass
class RobotState:
    position: np.ndarray
    heading: float
    force: np.ndarray = field(default_factory=lambda: np.zeros(2))
    v: float = 0.0
    w: float = 0.0


def wall_force(pos, bounds) -> np.ndarray:
    """Unit push back inside ``bounds`` per axis; the wall weight is applied in :func:`fuse_forces`."""
    x0, x1, y0, y1 = bounds
    fx = 1.0 if pos[0] < x0 else (-1.0 if pos[0] > x1 else 0.0)
    fy = 1.0 if pos[1] < y0 else (-1.0 if pos[1] > y1 else 0.0)
    return np.array([fx, fy])


def goal_force(pos, goal) -> np.ndarray:
    return np.asarray(goal, float) - np.asarray(pos, float)


def boids_forces(i: int, positions, directions, params: FlockParams):
    """(cohesion, separation, alignment) for robot ``i``.

    ``directions`` holds unit headings (or velocity directions) of every robot.
    """
    pos = np.asarray(positions, float)
    dirs = np.asarray(directions, float)
    rel = pos - pos[i]
    dist = np.hypot(rel[:, 0], rel[:, 1])
    others = np.arange(len(pos)) != i

    coh = np.zeros(2)
    m = others & (dist <= params.r_cohesion)
    if m.any():
        coh = pos[m].mean(axis=0) - pos[i]

    ali = np.zeros(2)
    m = others & (dist <= params.r_alignment)
    if m.any():
        ali = dirs[m].mean(axis=0) - dirs[i]

    sep = np.zeros(2)
    for j in np.flatnonzero(others & (dist <= params.r_separation)):
        sep += separation_term(pos[i], pos[j], params.separation_cap, tie=1.0 if i > j else -1.0)
    return coh, sep, ali


def separation_term(p_i, p_j, cap: float, tie: float = 1.0) -> np.ndarray:
    """(p_i - p_j) / |p_i - p_j|^2, capped in magnitude; coincident points push along +/-x."""
    d = np.asarray(p_i, float) - np.asarray(p_j, float)
    r2 = float(d @ d)
    if r2 < 1e-18:
        return np.array([tie * cap, 0.0])
    v = d / r2
    mag = math.sqrt(float(v @ v))
    if mag > cap:
        v *= cap / mag
    return v


def avoidance_force(angles, ranges, heading: float, trigger: float,
                    half_width: float | None = None, near: float = 0.0, stride: int = 5):
    """Steer toward the free direction closest to ``heading`` when something is near.

    Returns ``(vector, boxed_in)``. With ``half_width`` unset a beam is free
    when its own range reaches ``trigger`` and only beams within 90 degrees
    of the heading can trigger avoidance. With ``half_width`` set a direction
    is free when the robot-wide corridor along it is clear for ``trigger``
    (see :func:`corridor_distance`); every ``stride``-th beam is a candidate.
    """
    angles = np.asarray(angles, float)
    ranges = np.asarray(ranges, float)
    if half_width is None:
        off = wrap_angle(angles - heading)
        forward = np.abs(off) <= math.pi / 2
        blocked = ranges < trigger
        if not np.any(blocked & forward):
            return np.zeros(2), False
        safe = ~blocked
        if not safe.any():
            return -np.array([math.cos(heading), math.sin(heading)]), True
        k = np.flatnonzero(safe)[np.argmin(np.abs(off[safe]))]
        return np.array([math.cos(angles[k]), math.sin(angles[k])]), False

    if corridor_clearance(angles, ranges, [heading], half_width, near)[0] >= trigger:
        return np.zeros(2), False
    cand = angles[::stride]
    ok = corridor_clearance(angles, ranges, cand, half_width, near) >= trigger
    if not ok.any():
        return -np.array([math.cos(heading), math.sin(heading)]), True
    off = np.abs(wrap_angle(cand[ok] - heading))
    a = cand[ok][np.argmin(off)]
    return np.array([math.cos(a), math.sin(a)]), False


def corridor_clearance(angles, ranges, directions, half_width: float, near: float = 0.0) -> np.ndarray:
    """:func:`corridor_distance` evaluated for several travel directions at once."""
    angles = np.asarray(angles, float)
    ranges = np.asarray(ranges, float)
    hit = ranges < LIDAR_NO_RETURN
    dirs = np.asarray(directions, float)
    if not hit.any():
        return np.full(len(dirs), math.inf)
    off = angles[hit][None, :] - dirs[:, None]
    r = ranges[hit][None, :]
    x = r * np.cos(off)
    y = r * np.sin(off)
    m = (x > 0) & ((np.abs(y) < half_width) | (r <= near))
    return np.where(m, x, math.inf).min(axis=1)


def fuse_forces(prev, components: dict, params: FlockParams) -> np.ndarray:
    """Decayed accumulator plus the weighted sum of this tick's components."""
    w = params.weights
    total = params.decay * np.asarray(prev, float)
    for name, vec in components.items():
        total = total + w[name] * np.asarray(vec, float)
    return total


def to_velocity_cmd(force, heading: float, params: FlockParams) -> tuple[float, float]:
    """Speed from the force magnitude, turn rate steering toward its bearing."""
    f = np.asarray(force, float)
    norm = math.hypot(f[0], f[1])
    if norm < 1e-12:
        return 0.0, 0.0
    v = min(norm, params.max_speed)
    err = float(wrap_angle(math.atan2(f[1], f[0]) - heading))
    w = max(-params.max_turn, min(params.max_turn, err))
    return v, w


def heading_gate(v: float, force, heading: float) -> float:
    """Scale speed by how well the heading lines up with the force; stop beyond 90 degrees."""
    f = np.asarray(force, float)
    if math.hypot(f[0], f[1]) < 1e-12:
        return 0.0
    err = float(wrap_angle(math.atan2(f[1], f[0]) - heading))
    return v * max(math.cos(err), 0.0)


def corridor_distance(angles, ranges, heading: float, half_width: float, near: float = 0.0) -> float:
    """Forward distance to the first return inside the robot's swept corridor.

    Returns closer than ``near`` anywhere in the forward half also count, so
    something approaching from the side (or read at the sensor's minimum
    range) still blocks forward motion.
    """
    return float(corridor_clearance(angles, ranges, [heading], half_width, near)[0])


def speed_governor(v: float, ahead: float, params: FlockParams) -> float:
    """Cap forward speed so the body never closes below ``stop_clearance``."""
    gap = ahead - params.robot_radius - params.stop_clearance
    if gap <= 0:
        return 0.0
    return min(v, params.max_speed * min(1.0, gap / params.slow_distance))


def slot_position(leader_pos, leader_heading: float, offset) -> np.ndarray:
    c, s = math.cos(leader_heading), math.sin(leader_heading)
    return np.asarray(leader_pos, float) + np.array([c * offset[0] - s * offset[1],
                                                     s * offset[0] + c * offset[1]])


def spring_formation_force(position, leader_pos, leader_heading: float, offset, k: float = 1.5) -> np.ndarray:
    """Linear spring pulling a follower toward its slot in the leader frame."""
    return k * (slot_position(leader_pos, leader_heading, offset) - np.asarray(position, float))
