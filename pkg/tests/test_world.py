import hashlib
import math

import numpy as np
import pytest
from scipy.special import ndtr

from swarmsense.estimator import FusionParams, broadcast_payload, decode_payload, init_particles
from swarmsense.field import BasisLayout, GasFieldSpec
from swarmsense.geometry import Rect, rect_vertices
from swarmsense.scenarios import builtin, lab_truth_field
from swarmsense.world import (LIDAR_MAX, LIDAR_MIN, CommGraph, MoverSpec, MovingAverage, RssiModel,
                              SyntheticField, World, WorldScenario)

ARENA = Rect(0, 0, 20, 20)


def make_world(robots, statics=(), movers=(), source=None, dt=0.1, seed=0, comm=3.0):
    src = source or SyntheticField(lab_truth_field())
    sc = WorldScenario("t", ARENA, np.array(robots, float), src, list(statics), movers=list(movers),
                       dt=dt, seed=seed, comm_radius=comm)
    return World(sc)


def test_scenario_rejects_bad_start():
    with pytest.raises(ValueError):
        make_world([[5, 5, 0]], statics=[rect_vertices(4, 4, 6, 6)])
    with pytest.raises(ValueError):
        make_world([[25, 5, 0]])
    with pytest.raises(ValueError):
        make_world([[5, 5, 0]], dt=0.0)


# ---------------------------------------------------------------- motion

def test_tick_at_30hz_advances_5mm():
    w = make_world([[5, 5, 0]], dt=1 / 30)
    w.set_command(0, 0.15, 0.0)
    w.tick()
    assert w.pos[0, 0] - 5 == pytest.approx(0.005, abs=1e-12)
    assert w.pos[0, 1] == 5


def test_pure_rotation_full_turn():
    dt = 0.001
    w = make_world([[5, 5, 0.3]], dt=dt)
    steps = round(2 * math.pi / 0.73 / dt)
    w.set_command(0, 0.0, 2 * math.pi / (steps * dt))
    for _ in range(steps):
        w.tick()
    err = (w.heading[0] - 0.3 + math.pi) % (2 * math.pi) - math.pi
    assert abs(err) < 1e-6
    assert np.array_equal(w.pos[0], [5, 5])


def test_unicycle_matches_hand_integration():
    w = make_world([[5, 5, 0.4]], dt=0.1)
    x, y, th = 5.0, 5.0, 0.4
    for k in range(50):
        v, om = 0.1 + 0.001 * k, 0.3 * math.sin(k / 5)
        w.set_command(0, v, om)
        w.tick()
        x, y, th = x + v * math.cos(th) * 0.1, y + v * math.sin(th) * 0.1, th + om * 0.1
    assert w.pos[0] == pytest.approx([x, y], abs=1e-12)


def test_zero_command_never_moves():
    w = make_world([[5, 5, 0], [8, 8, 1]])
    for _ in range(100):
        w.tick()
    assert np.array_equal(w.pos, [[5, 5], [8, 8]])


def test_no_teleporting_with_random_commands():
    w = make_world([[3, 3, 0], [10, 10, 1], [15, 4, 2]], statics=[rect_vertices(6, 6, 8, 8)])
    rng = np.random.default_rng(0)
    for _ in range(600):
        old = w.pos.copy()
        for i in range(3):
            w.set_command(i, rng.uniform(0, 0.15), rng.uniform(-0.73, 0.73))
        w.tick()
        assert np.all(np.linalg.norm(w.pos - old, axis=1) <= 0.15 * w.dt + 1e-9)


def test_collision_logged_and_robot_halted():
    w = make_world([[17.0, 10.0, 0.0]], statics=[rect_vertices(18.0, 9.0, 19.0, 11.0)])
    w.set_command(0, 0.15, 0.0)
    for _ in range(100):
        w.tick()
    assert len(w.collisions) == 1 and w.collisions[0].other == "static"
    # the robot stops just short of the face instead of passing through
    assert 17.6 < w.pos[0, 0] < 18.0 - w.radius + 1e-9


def test_collision_count_matches_replay_oracle():
    # two robots driven head on until they meet, then held still
    w = make_world([[5.0, 5.0, 0.0], [6.0, 5.0, math.pi]])
    script = [(0.15, 0.15)] * 40 + [(0.0, 0.0)] * 5
    contacts, prev = 0, False
    for v0, v1 in script:
        w.set_command(0, v0, 0.0)
        w.set_command(1, v1, 0.0)
        before = w.pos.copy()
        w.tick()
        # oracle: would the commanded step have brought the bodies into contact?
        p0 = before[0] + [v0 * w.dt, 0.0]
        p1 = before[1] - [v1 * w.dt, 0.0]
        hit = np.linalg.norm(p0 - p1) < 2 * w.radius
        contacts += hit and not prev
        prev = hit
    assert len(w.collisions) == contacts == 1


# ----------------------------------------------------------------- comms

def test_comm_threshold():
    assert CommGraph.from_positions([[0, 0], [3.1, 0]], 3.0).neighbors(0) == []
    assert CommGraph.from_positions([[0, 0], [2.9, 0]], 3.0).neighbors(0) == [1]


def test_comm_graph_symmetric_each_tick():
    w = make_world([[2, 2, 0], [4, 3, 1], [5, 5, 2], [12, 12, 0]])
    rng = np.random.default_rng(1)
    for _ in range(100):
        for i in range(4):
            w.set_command(i, rng.uniform(0, 0.15), rng.uniform(-0.7, 0.7))
        w.tick()
        a = w.comm.adjacency
        assert np.array_equal(a, a.T) and not a.diagonal().any()


def test_ring_topology_delivery():
    w = make_world([[2, 5, 0], [4.5, 5, 0], [7, 5, 0]])
    w.broadcast(0, "hello", b"a")
    w.tick()
    assert [m.payload for m in w.drain(1)] == [b"a"]
    assert w.drain(2) == [] and w.drain(0) == []


def test_lonely_sender_and_trio():
    w = make_world([[2, 2, 0], [10, 10, 0]])
    w.broadcast(0, "x", 1)
    w.tick()
    assert w.drain(1) == []
    w = make_world([[2, 2, 0], [3, 2, 0], [2, 3, 0]])
    for i in range(3):
        w.broadcast(i, "x", i)
    w.tick()
    assert all(len(w.drain(i)) == 2 for i in range(3))


def test_fifo_per_sender_and_one_tick_latency():
    w = make_world([[2, 2, 0], [3, 2, 0]])
    w.broadcast(0, "x", 1)
    w.broadcast(0, "x", 2)
    assert w.drain(1) == []
    w.tick()
    assert [m.payload for m in w.drain(1)] == [1, 2]


def test_particle_payload_bit_exact_through_world():
    ps = init_particles(FusionParams(n_particles=50), 16, np.random.default_rng(3), agent_id=0)
    w = make_world([[2, 2, 0], [3, 2, 0]])
    w.broadcast(0, "particles", broadcast_payload(ps))
    w.tick()
    got = decode_payload(w.drain(1, "particles")[0].payload)
    assert got.weights.tobytes() == ps.weights.tobytes()
    assert got.particles.tobytes() == ps.particles.tobytes()


def test_drain_by_kind_keeps_other_messages():
    w = make_world([[2, 2, 0], [3, 2, 0]])
    w.broadcast(0, "a", 1)
    w.broadcast(0, "b", 2)
    w.tick()
    assert [m.payload for m in w.drain(1, "b")] == [2]
    assert [m.payload for m in w.drain(1)] == [1]


# ----------------------------------------------------------------- LiDAR

def test_lidar_empty_world_reads_walls_or_max():
    sc = WorldScenario("big", Rect(0, 0, 100, 100), np.array([[50.0, 50.0, 0.0]]),
                       SyntheticField(lab_truth_field()))
    _, r = World(sc).lidar_scan(0)
    assert np.all(r == LIDAR_MAX)


def test_lidar_wall_five_metres_ahead():
    w = make_world([[10.0, 10.0, 0.0]], statics=[rect_vertices(15.0, 5.0, 16.0, 15.0)])
    ang, r = w.lidar_scan(0)
    k = int(np.argmin(np.abs(ang)))
    assert ang[k] == 0.0
    assert abs(r[k] - 5.0) < 1e-9
    # off-axis beams hit the same face at 5 / cos(a)
    for j in (k - 40, k + 40):
        assert r[j] == pytest.approx(5.0 / math.cos(ang[j]), abs=1e-9)


def test_lidar_min_range_clip():
    w = make_world([[10.0, 10.0, 0.0]], statics=[rect_vertices(10.3, 9.0, 11.0, 11.0)])
    ang, r = w.lidar_scan(0)
    assert r[int(np.argmin(np.abs(ang)))] == LIDAR_MIN


def test_lidar_sees_other_robots_and_movers():
    mover = MoverSpec([[10.0, 14.0]], speed=0.0, radius=0.3)
    w = make_world([[10.0, 10.0, 0.0], [12.0, 10.0, 0.0]], movers=[mover])
    ang, r = w.lidar_scan(0)
    assert r[int(np.argmin(np.abs(ang)))] == pytest.approx(2.0 - 0.25, abs=1e-9)
    assert r[int(np.argmin(np.abs(ang - math.pi / 2)))] == pytest.approx(4.0 - 0.3, abs=1e-9)


def test_lidar_short_range_matches_full_scan():
    world = World(builtin("lab"))
    world.pos[0] = [3.0, 6.0]
    ang, full = world.lidar_scan(0)
    _, short = world.lidar_scan(0, max_range=1.1)
    close = full <= 1.1
    assert np.array_equal(short[close], full[close])
    assert np.all(short[~close] >= 1.1 - 1e-12)


def test_lidar_fov_and_resolution():
    w = make_world([[5, 5, 0.7]])
    ang = w.lidar_angles(0)
    assert len(ang) == 541
    assert ang[0] == pytest.approx(0.7 - math.radians(135))
    assert np.allclose(np.diff(ang), math.radians(0.5))


# --------------------------------------------------------------- sensing

def test_bit_probability_at_source_center():
    spec = GasFieldSpec(BasisLayout([[10.0, 10.0]], [7.7]), [1.6], math.sqrt(0.32), 1.0)
    w = make_world([[10.0, 10.0, 0.0]], source=SyntheticField(spec), seed=4)
    bits = [w.sense(0)[0].bit for _ in range(10_000)]
    want = 1.0 - ndtr((1.0 - 1.6) / math.sqrt(0.32))
    assert want == pytest.approx(0.855, abs=1e-3)
    assert abs(np.mean(bits) - want) < 0.02


def test_rssi_clamped_at_emitter():
    model = RssiModel([10.0, 10.0], noise_std=0.0)
    w = make_world([[10.0, 10.0, 0.0]], source=model)
    obs, y = w.sense(0)
    assert y == 50.0 and obs.bit == 1
    assert model.sample([10.0, 10.0], np.random.default_rng(0)) == 50.0


def test_rssi_floor_and_threshold():
    model = RssiModel([0.5, 0.5], noise_std=0.0)
    assert model.sample([19.5, 19.5], np.random.default_rng(0)) >= 15.0
    far = make_world([[19.0, 19.0, 0.0]], source=model)
    assert far.sense(0)[0].bit == 0


def test_moving_average():
    m = MovingAverage(5)
    for _ in range(12):
        assert m.push(3.25) == 3.25
    m = MovingAverage(3)
    for v in (1, 2, 3, 4):
        m.push(v)
    assert m.value == 3.0
    with pytest.raises(ValueError):
        RssiModel([0, 0], window=0)


def test_rssi_filter_updates_over_time():
    model = RssiModel([10.0, 10.0], noise_std=0.0)
    w = make_world([[4.0, 10.0, 0.0]], source=model)
    first = w.sense(0)[1]
    w.set_command(0, 0.15, 0.0)
    for _ in range(300):
        w.tick()
    assert w.sense(0)[1] > first


# ---------------------------------------------------------------- movers

def test_mover_loops_at_speed():
    mover = MoverSpec([[2.0, 2.0], [6.0, 2.0]], speed=0.5)
    w = make_world([[10.0, 10.0, 0.0]], movers=[mover])
    for _ in range(40):
        w.tick()
    assert w.mover_pos[0] == pytest.approx([4.0, 2.0])
    for _ in range(120):
        w.tick()
    assert w.mover_pos[0] == pytest.approx([2.0, 2.0])   # on to the far end and back home
    for _ in range(20):
        w.tick()
    assert w.mover_pos[0] == pytest.approx([3.0, 2.0])


def test_mover_waits_for_robot_in_path():
    mover = MoverSpec([[2.0, 5.0], [12.0, 5.0]], speed=0.5)
    w = make_world([[5.0, 5.0, 0.0]], movers=[mover])
    for _ in range(200):
        w.tick()
    assert w.mover_pos[0, 0] < 5.0 - 0.55
    assert w.collisions == []


# ---------------------------------------------------------- determinism

def _state_hash(seed):
    w = World(builtin("crowd1", seed))
    rng = np.random.default_rng(seed)
    h = hashlib.sha256()
    for _ in range(300):
        for i in range(w.n):
            w.set_command(i, rng.uniform(0, 0.15), rng.uniform(-0.73, 0.73))
        w.tick()
        for row in w.state_rows():
            h.update(repr(row).encode())
        h.update(repr(w.mover_pos.tolist()).encode())
    return h.hexdigest()


def test_state_log_hash_deterministic():
    assert _state_hash(2) == _state_hash(2)
    assert _state_hash(2) != _state_hash(3)


def test_state_rows_are_exact():
    w = make_world([[1.0 / 3.0, 2.0, 0.1]])
    row = next(w.state_rows())
    assert float(row[2]) == 1.0 / 3.0
