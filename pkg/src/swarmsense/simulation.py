"""Closed-loop mission: coverage in formation, then swarm active sensing.

One :func:`run_mission` call advances a :class:`~swarmsense.world.World`
tick by tick. Each robot runs its own particle filter, exchanges particle
clouds and waypoint proposals over the radio bus and is steered either by
the formation controller (coverage) or the flocking controller (active
sensing).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import active_sensing as asense
from .coverage import CoveragePlan, formation_for_block, plan_coverage, select_cell_size
from .estimator import (FusionParams, Prior, broadcast_payload, decode_payload, estimate_field,
                        fuse_and_update, init_particles)
from .field import make_basis_grid
from .geometry import Rect, wrap_angle
from .metrics import (FieldLattice, anmse, coverage_percentage, estimated_source, lattice_points,
                      path_length, source_error, whca)
from .mission import (EventKind, MissionMode, TransitionEvent, reduced_model, single_mode_table, step)
from .swarm import (FlockParams, avoidance_force, boids_forces, corridor_distance, fuse_forces,
                    goal_force, heading_gate, slot_position, speed_governor, to_velocity_cmd, wall_force)
from .world import World, WorldScenario

MODES = ("cpp-as", "as-only", "cpp-only")


@dataclass
class MissionConfig:
    mode: str = "cpp-as"
    n_particles: int = 1000
    quota: int = 359                 # measurement epochs before stopping
    time_limit: float = 2400.0       # simulated seconds
    measure_period: float = 5.0
    cell_size: float | None = 3.15
    budget: float = 1500.0           # used when cell_size is None
    max_block_cells: int | None = None
    leader_speed: float = 0.16
    formation: str = "V"
    formation_spacing: float = 1.2
    spring_k: float = 1.5
    as_step: float = 1.5
    as_dirs: int = 10
    as_steps: int = 1
    beta: float = 0.5
    epsilon: float = 0.01
    arrive_radius: float = 0.25
    group_radius: float = 1.5
    epoch_timeout: float = 60.0
    shrinkage: float = 0.98
    eta: float = 0.0
    scan_radius: float = 1.1
    state_every: int = 1             # ticks between state-log rows
    whca_level: float | None = None  # defaults to the sensor threshold

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.quota < 1 or self.time_limit <= 0 or self.measure_period <= 0:
            raise ValueError("quota, time_limit and measure_period must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "MissionConfig":
        known = {f.name for f in fields(cls)}
        bad = set(d) - known
        if bad:
            raise ValueError(f"unknown mission settings: {sorted(bad)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class RunRecord:
    scenario: str
    mode: str
    seed: int
    estimates: list = field(default_factory=list)     # (epoch, t, agent, mse, gains..., noise_var)
    mse: dict = field(default_factory=dict)           # agent -> [(t, mse)]
    trajectories: list = field(default_factory=list)  # per robot (k, 3) arrays of t, x, y
    state_rows: list = field(default_factory=list)
    mode_changes: list = field(default_factory=list)
    decisions: list = field(default_factory=list)
    collisions: list = field(default_factory=list)
    weight_sums: list = field(default_factory=list)
    cpp_end: float | None = None
    end_time: float = 0.0
    epochs: int = 0
    min_gap: float = math.inf
    footprint: float = 0.0
    summary: dict = field(default_factory=dict)
    plan: CoveragePlan | None = None

    def meta(self) -> dict:
        return {"scenario": self.scenario, "mode": self.mode, "seed": self.seed, "end_time": self.end_time,
                "epochs": self.epochs, "min_gap": self.min_gap, "footprint": self.footprint,
                "cpp_end": None if self.cpp_end is None else self.cpp_end}

    def mse_curve(self, times) -> np.ndarray:
        """Agent-mean of each agent's latest MSE at every time in ``times``."""
        times = np.asarray(times, float)
        cols = []
        for agent in sorted(self.mse):
            t, v = np.array(self.mse[agent]).T
            k = np.searchsorted(t, times, side="right") - 1
            cols.append(np.where(k >= 0, v[np.clip(k, 0, None)], np.nan))
        return np.nanmean(np.array(cols), axis=0)


class VirtualLeader:
    """Virtual leader walking the coverage route with paced speed."""

    def __init__(self, route: np.ndarray, seg_blocks: list, speed: float, turn_rate: float):
        self.route = route
        self.seg_blocks = seg_blocks
        self.speed = speed
        self.turn_rate = turn_rate
        self.seg = 0
        self.pos = route[0].copy()
        self.heading = self._seg_heading(0)
        self.done = len(route) < 2
        self.assigned_seg = -1
        self.assignment = None

    def _seg_heading(self, k):
        k = min(k, len(self.route) - 2)
        d = self.route[k + 1] - self.route[k]
        if np.hypot(*d) < 1e-12:
            return getattr(self, "heading", 0.0)
        return math.atan2(d[1], d[0])

    @property
    def block(self):
        return self.seg_blocks[min(self.seg, len(self.seg_blocks) - 1)]

    def advance(self, pace: float, dt: float) -> np.ndarray:
        """Move along the route; returns the leader's velocity vector."""
        if self.done:
            return np.zeros(2)
        target = self._seg_heading(self.seg)
        err = float(wrap_angle(target - self.heading))
        if abs(err) > 1e-6:
            turn = max(-self.turn_rate * dt, min(self.turn_rate * dt, err))
            self.heading = float(wrap_angle(self.heading + turn))
            return np.zeros(2)
        budget = self.speed * pace * dt
        start = self.pos.copy()
        while budget > 1e-12 and not self.done:
            end = self.route[self.seg + 1]
            d = end - self.pos
            dist = float(np.hypot(*d))
            if dist <= budget:
                self.pos = end.copy()
                budget -= dist
                self.seg += 1
                if self.seg >= len(self.route) - 1:
                    self.done = True
                    break
                if abs(wrap_angle(self._seg_heading(self.seg) - self.heading)) > 1e-6:
                    break
            else:
                self.pos = self.pos + d / dist * budget
                budget = 0.0
        return (self.pos - start) / dt


def _seed_streams(seed: int, n: int):
    ss = np.random.SeedSequence([int(seed), 7])
    world_ss, *agent_ss = ss.spawn(n + 1)
    return int(world_ss.generate_state(1)[0]), [np.random.default_rng(s) for s in agent_ss]


def build_plan(scenario: WorldScenario, cfg: MissionConfig) -> CoveragePlan:
    kind = cfg.formation
    if cfg.cell_size is None:
        _, plan, _ = select_cell_size(scenario, cfg.budget, cfg.leader_speed,
                                      max_block_cells=cfg.max_block_cells or 1, formation_kind=kind)
        return plan
    return plan_coverage(scenario, cfg.cell_size, cfg.leader_speed,
                         max_block_cells=cfg.max_block_cells, formation_kind=kind)


def run_mission(scenario: WorldScenario, cfg: MissionConfig | None = None, seed: int | None = None,
                progress=None, record: RunRecord | None = None) -> RunRecord:
    """Simulate one mission and return its logs and summary.

    Pass ``record`` to have the logs filled in place, so whatever was logged
    survives if the run raises part way through.
    """
    cfg = cfg or MissionConfig()
    seed = scenario.seed if seed is None else seed
    n = len(scenario.robots)
    world_seed, agent_rngs = _seed_streams(seed, n)
    world = World(scenario, seed=world_seed)
    dt = world.dt
    arena = scenario.arena
    tau = scenario.threshold
    layout = make_basis_grid(arena, scenario.basis_count, scenario.basis_width)
    truth = scenario.source.spec if scenario.synthetic else None
    lattice = FieldLattice.build(layout, arena, truth)
    fparams = FusionParams(n_particles=cfg.n_particles, shrinkage=cfg.shrinkage, eta=cfg.eta,
                           prior=Prior.for_threshold(tau))
    flock = FlockParams.for_arena(arena, robot_radius=scenario.robot_radius)
    clearance = scenario.robot_radius + 0.1
    region = Rect(arena.xmin + clearance, arena.ymin + clearance, arena.xmax - clearance, arena.ymax - clearance)
    asp = asense.ASParams(region, scenario.all_static, beta=cfg.beta, epsilon=cfg.epsilon,
                          step=cfg.as_step, n_steps=cfg.as_steps, n_dirs=cfg.as_dirs, clearance=clearance)

    rec = record if record is not None else RunRecord(scenario.name, cfg.mode, seed)
    sets = [init_particles(fparams, layout.count, agent_rngs[i], agent_id=i) for i in range(n)]

    def log_estimate(e, i):
        est = estimate_field(sets[i])
        m = lattice.mse(est.gains_hat)
        rec.mse.setdefault(i, []).append((world.t, m))
        rec.estimates.append((e, world.t, i, m, *est.gains_hat.tolist(), est.noise_var_hat))

    for i in range(n):
        log_estimate(0, i)
    fresh = [dict() for _ in range(n)]          # sender -> latest particle set since last fusion
    inbox_props = [dict() for _ in range(n)]    # epoch -> list of proposals

    # mission table and plan
    if cfg.mode == "cpp-as":
        table, mode = reduced_model(), MissionMode.CPP_LOW
    elif cfg.mode == "cpp-only":
        table, mode = single_mode_table(MissionMode.CPP_LOW), MissionMode.CPP_LOW
    else:
        table, mode = single_mode_table(MissionMode.ACTIVE_SENSING), MissionMode.ACTIVE_SENSING

    plan = None
    leader = None
    formations = {}
    if cfg.mode != "as-only":
        plan = build_plan(scenario, cfg)
        rec.plan = plan
        leader = _make_leader(plan, flock, cfg)
        for b in plan.blocks:
            formations[b.index] = formation_for_block(b.size, n, b.side, cfg.formation, cfg.formation_spacing)
        # coverage footprint: formation half-width, never less than a robot body
        rec.footprint = max([scenario.robot_radius] + [float(np.abs(f.offsets[:, 1]).max()) for f in formations.values()])

    forces = np.zeros((n, 2))
    goals = world.pos.copy()
    epoch = 0
    epoch_start = 0.0
    next_measure = 0.0
    as_epoch_pending = mode == MissionMode.ACTIVE_SENSING
    awaiting_consensus = None
    events = []

    def transition(kind):
        nonlocal mode
        ev = TransitionEvent(kind, world.t)
        events.append(ev)
        nxt = step(mode, ev, table)
        if nxt != mode:
            rec.mode_changes.append((world.t, mode.value, nxt.value, kind.value))
            mode = nxt
        return mode

    def measure_all():
        nonlocal epoch
        epoch += 1
        for i in range(n):
            obs, _ = world.sense(i)
            nbrs = list(fresh[i].values())
            fresh[i].clear()
            sets[i] = fuse_and_update(sets[i], nbrs, obs, fparams, layout, tau, agent_rngs[i])
            rec.weight_sums.append(float(sets[i].weights.sum()))
            log_estimate(epoch, i)
            world.broadcast(i, "particles", broadcast_payload(sets[i]))
        if epoch >= cfg.quota:
            transition(EventKind.QUOTA_REACHED)

    def propose_all():
        for i in range(n):
            prop = asense.select_waypoint(world.pos[i], sets[i], asp, layout, tau, agent_rngs[i], agent_id=i)
            inbox_props[i].setdefault(epoch, []).append(prop)
            world.broadcast(i, "proposal", (epoch, prop))
        return epoch

    while True:
        # receive
        for i in range(n):
            for msg in world.drain(i):
                if msg.kind == "particles":
                    fresh[i][msg.sender] = decode_payload(msg.payload)
                elif msg.kind == "proposal":
                    e, prop = msg.payload
                    inbox_props[i].setdefault(e, []).append(prop)

        if awaiting_consensus is not None:
            e = awaiting_consensus
            for i in range(n):
                props = inbox_props[i].pop(e, [])
                if props:
                    goals[i] = asense.consensus_select(props)
                    chosen = goals[i]
                    for p in props:
                        if p.agent_id == i:
                            rec.decisions.append((e, i, p.candidate[0], p.candidate[1], p.reward,
                                                  int(p.explored), chosen[0], chosen[1]))
                for old in [k for k in inbox_props[i] if k < e]:
                    del inbox_props[i][old]
            awaiting_consensus = None
            epoch_start = world.t

        # control
        if mode in (MissionMode.CPP_LOW, MissionMode.CPP_HIGH):
            if world.t + 1e-9 >= next_measure:
                measure_all()
                next_measure += cfg.measure_period
            if mode in (MissionMode.CPP_LOW, MissionMode.CPP_HIGH):
                formation_control(world, leader, formations, flock, cfg)
                if leader.done:
                    if rec.cpp_end is None:
                        rec.cpp_end = world.t
                    if cfg.mode == "cpp-only":
                        leader = _make_leader(plan, flock, cfg, start=leader.pos)
                    else:
                        transition(EventKind.COVERAGE_DONE)
                        as_epoch_pending = True
        if mode == MissionMode.ACTIVE_SENSING:
            due = as_epoch_pending
            if not due and awaiting_consensus is None:
                since = world.t - epoch_start
                d_goal = np.linalg.norm(world.pos - goals, axis=1)
                arrived = d_goal.min() <= cfg.arrive_radius or d_goal.max() <= cfg.group_radius
                due = since + 1e-9 >= cfg.measure_period and (arrived or since >= cfg.epoch_timeout)
            if due:
                as_epoch_pending = False
                measure_all()
                if mode == MissionMode.ACTIVE_SENSING:
                    awaiting_consensus = propose_all()
            if mode == MissionMode.ACTIVE_SENSING:
                forces = flocking_control(world, goals, forces, flock, cfg)
        if mode == MissionMode.STOPPED:
            world.cmd_v[:] = 0.0
            world.cmd_w[:] = 0.0

        if mode == MissionMode.STOPPED or world.t + 1e-9 >= cfg.time_limit:
            break
        if world.steps % cfg.state_every == 0:
            rec.state_rows.extend(world.state_rows([mode.value] * n))
        world.tick()
        rec.collisions = [(c.time, c.robot, c.other, c.gap) for c in world.collisions]
        if progress is not None and world.steps % 1000 == 0:
            progress(world.t, epoch, mode)

    rec.state_rows.extend(world.state_rows([mode.value] * n))
    rec.collisions = [(c.time, c.robot, c.other, c.gap) for c in world.collisions]
    rec.end_time = world.t
    rec.epochs = epoch
    rec.min_gap = float(world.min_gap)
    rec.trajectories = trajectories_from_rows(rec.state_rows, n)
    rec.summary = summarize_run(scenario, cfg, rec.estimates, rec.trajectories, rec.collisions,
                                rec.meta(), None if plan is None else plan.grid)
    return rec


def _make_leader(plan: CoveragePlan, flock: FlockParams, cfg: MissionConfig, start=None) -> VirtualLeader:
    route = plan.route if start is None else np.vstack([start, plan.waypoints, plan.waypoints[:1], plan.start])
    wb = plan.waypoint_blocks
    if len(wb) == 0:
        seg_blocks = [None] * max(len(route) - 1, 1)
    else:
        # start leg and closing legs use the blocks at their far/near ends
        seg_blocks = [wb[0]] + list(wb) + [wb[0]]
    return VirtualLeader(route, seg_blocks, cfg.leader_speed, flock.max_turn)


def _clear_scan(world: World, cfg: MissionConfig):
    near = world.nearest_surface()
    return near <= cfg.scan_radius


def _half_width(flock: FlockParams) -> float:
    return flock.robot_radius + 0.05


def _safe_command(world: World, i: int, u, flock: FlockParams, scan):
    v, w = to_velocity_cmd(u, world.heading[i], flock)
    v = heading_gate(v, u, world.heading[i])
    if scan is not None:
        ahead = corridor_distance(scan[0], scan[1], world.heading[i], _half_width(flock),
                                  near=flock.robot_radius + flock.stop_clearance)
        v = speed_governor(v, ahead, flock)
    world.set_command(i, v, w)


def _avoid(scan, u, heading: float, flock: FlockParams):
    """Free beam nearest the desired direction when something sits in the way."""
    ref = math.atan2(u[1], u[0]) if np.hypot(*u) > 1e-12 else heading
    vec, _ = avoidance_force(scan[0], scan[1], ref, flock.avoid_trigger, half_width=_half_width(flock),
                             near=flock.robot_radius + flock.stop_clearance)
    return vec


def formation_control(world: World, leader: VirtualLeader, formations: dict, flock: FlockParams, cfg: MissionConfig):
    """Advance the virtual leader and set every robot's command toward its formation slot."""
    n = world.n
    form = formations.get(leader.block)
    offsets = form.offsets if form is not None else np.zeros((n, 2))
    if leader.assigned_seg != leader.seg:
        # match robots to slots of the upcoming leg so nobody has to pass a teammate
        ahead = leader._seg_heading(leader.seg)
        target = np.array([slot_position(leader.pos, ahead, o) for o in offsets])
        cost = ((world.pos[:, None] - target[None]) ** 2).sum(axis=-1)
        _, leader.assignment = linear_sum_assignment(cost)
        leader.assigned_seg = leader.seg
    offsets = offsets[leader.assignment]
    slots = np.array([slot_position(leader.pos, leader.heading, offsets[i]) for i in range(n)])
    # slow the leader only for followers that trail along the direction of travel
    h = np.array([math.cos(leader.heading), math.sin(leader.heading)])
    lag = float(np.max((slots - world.pos) @ h))
    pace = min(1.0, max(0.2, 1.0 - (lag - 0.1) / 0.5))
    vel = leader.advance(pace, world.dt)
    near = _clear_scan(world, cfg)
    for i in range(n):
        slot = slot_position(leader.pos, leader.heading, offsets[i])
        u = vel + cfg.spring_k * (slot - world.pos[i])
        scan = None
        if near[i]:
            scan = world.lidar_scan(i, max_range=cfg.scan_radius)
            avoid = _avoid(scan, u, world.heading[i], flock)
            if avoid.any():
                u = avoid * max(float(np.hypot(*u)), flock.max_speed)
        _safe_command(world, i, u, flock, scan)


def flocking_control(world: World, goals, forces, flock: FlockParams, cfg: MissionConfig):
    """Flocking toward ``goals``; returns the updated force accumulators."""
    n = world.n
    dirs = np.column_stack([np.cos(world.heading), np.sin(world.heading)])
    near = _clear_scan(world, cfg)
    out = forces.copy()
    for i in range(n):
        coh, sep, ali = boids_forces(i, world.pos, dirs, flock)
        comps = {"cohesion": coh, "separation": sep, "alignment": ali,
                 "wall": wall_force(world.pos[i], flock.wall_bounds),
                 "goal": goal_force(world.pos[i], goals[i])}
        out[i] = fuse_forces(forces[i], comps, flock)
        scan = None
        u = out[i]
        if near[i]:
            scan = world.lidar_scan(i, max_range=cfg.scan_radius)
            avoid = _avoid(scan, u, world.heading[i], flock)
            if avoid.any():
                # steer along the free beam; keep the accumulator's memory out of it
                u = flock.w_avoid * avoid * max(float(np.hypot(*u)), flock.max_speed)
        _safe_command(world, i, u, flock, scan)
    return out


def trajectories_from_rows(rows, n_robots: int) -> list:
    """Per-robot ``(k, 3)`` arrays of (t, x, y) from state-log rows."""
    out = [[] for _ in range(n_robots)]
    for r in rows:
        out[int(r[1])].append((float(r[0]), float(r[2]), float(r[3])))
    return [np.array(o, dtype=float).reshape(-1, 3) for o in out]


def final_estimates(estimates) -> dict:
    """Latest logged gains per agent."""
    last = {}
    for row in estimates:
        last[int(row[2])] = np.array(row[4:-1], dtype=float)
    return last


def mse_by_agent(estimates) -> dict:
    out = {}
    for row in estimates:
        out.setdefault(int(row[2]), []).append((float(row[1]), float(row[3])))
    return out


def summarize_run(scenario: WorldScenario, cfg: MissionConfig, estimates, trajectories, collisions,
                  meta: dict, grid=None) -> dict:
    """Scalar metrics of one run, computed only from logged data."""
    layout = make_basis_grid(scenario.arena, scenario.basis_count, scenario.basis_width)
    points = lattice_points(scenario.arena)
    cpp_end = meta.get("cpp_end")
    out = {"end_time": float(meta["end_time"]), "epochs": int(meta["epochs"]),
           "collisions": len(collisions), "min_gap": float(meta["min_gap"]),
           "cpp_end": float("nan") if cpp_end is None else float(cpp_end)}
    per_agent = {}
    for row in estimates:
        if int(row[0]) > 0:
            per_agent.setdefault(int(row[2]), []).append(float(row[3]))
    out["anmse_count"], _ = anmse(per_agent)
    mse = mse_by_agent(estimates)
    out["final_mse"] = float(np.mean([mse[i][-1][1] for i in sorted(mse)]))
    level = cfg.whca_level if cfg.whca_level is not None else scenario.threshold
    errs, widths = [], []
    for i, g in sorted(final_estimates(estimates).items()):
        src, _ = estimated_source(g, layout, points)
        if scenario.true_source is not None:
            errs.append(source_error(src, scenario.true_source))
        widths.append(whca(g, layout, points, level)[0])
    out["source_error"] = float(np.mean(errs)) if errs else float("nan")
    out["whca"] = float(np.mean(widths))
    out["path_length"] = float(np.mean([path_length(t) for t in trajectories]))
    if grid is not None:
        foot = float(meta.get("footprint") or 0.0)
        total, direct, indirect = coverage_percentage(trajectories, grid, footprint=foot)
        out.update(coverage=total, coverage_direct=direct, coverage_indirect=indirect)
    return out
