import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from shapely.geometry import box

from swarmsense.active_sensing import (
    ASParams,
    Proposal,
    candidate_set,
    consensus_select,
    expected_reward,
    reward_terms,
    select_waypoint,
)
from swarmsense.estimator import FusionParams, ParticleSet, Prior, estimate_field, fuse_and_update, init_particles
from swarmsense.field import BasisLayout, BinaryObservation, binarize, sample_measurement
from swarmsense.geometry import Rect, rect_vertices

from checkers import point_in_polygon
from toy import LAYOUT as TOY_LAYOUT, NOISE_STD, TAU, TRUTH

REGION = Rect(0, 0, 10, 10)
LAYOUT1 = BasisLayout([[0.0, 0.0]], [1.0])


def circle_vertices(cx, cy, r, n=64):
    a = np.linspace(0, 2 * math.pi, n, endpoint=False)
    return np.column_stack([cx + r * np.cos(a), cy + r * np.sin(a)])


def test_params_validation():
    with pytest.raises(ValueError):
        ASParams(REGION, beta=1.0)
    with pytest.raises(ValueError):
        ASParams(REGION, beta=0.0)
    with pytest.raises(ValueError):
        ASParams(REGION, epsilon=1.5)
    with pytest.raises(ValueError):
        ASParams(REGION, step=0.0)
    with pytest.raises(ValueError):
        ASParams(REGION, n_dirs=0)


# ------------------------------------------------------------ candidates

def test_candidates_ring_of_ten():
    pts, sparse = candidate_set([5.0, 5.0], ASParams(REGION))
    assert len(pts) == 11 and not sparse
    assert len({(round(x, 12), round(y, 12)) for x, y in pts}) == 11
    assert np.allclose(np.linalg.norm(pts[1:] - [5, 5], axis=1), 1.5)


def test_candidates_multiple_steps():
    pts, _ = candidate_set([5.0, 5.0], ASParams(REGION, n_steps=2, n_dirs=8))
    assert len(pts) == 17


def test_candidates_clipped_at_corner():
    pts, _ = candidate_set([0.5, 0.5], ASParams(REGION))
    assert np.all((pts >= 0) & (pts <= 10))
    assert len(pts) < 11


def test_candidates_avoid_obstacle_disk():
    disk = circle_vertices(6.5, 5.0, 1.2)
    p = ASParams(REGION, obstacles=[disk], clearance=0.35)
    pts, _ = candidate_set([5.0, 5.0], p)
    assert not any(x > 6.0 for x, _ in pts)
    for x, y in pts:
        assert not point_in_polygon(x, y, disk)
        assert np.min(np.hypot(disk[:, 0] - x, disk[:, 1] - y)) > 0.35 - 0.01


def test_candidates_all_blocked_flagged():
    p = ASParams(REGION, obstacles=[rect_vertices(1, 1, 9, 9)], clearance=0.35)
    pts, sparse = candidate_set([5.0, 5.0], p)
    assert len(pts) == 0 and sparse


# ---------------------------------------------------------------- reward

def test_reward_two_particle_ln2():
    # particle 0 never reads 1, particle 1 always does
    parts = np.array([[0.0, math.log(1e-6)], [5.0, math.log(1e-6)]])
    ps = ParticleSet(parts, np.array([0.5, 0.5]))
    r = expected_reward([0.0, 0.0], ps, LAYOUT1, threshold=1.0, beta=0.5)
    assert abs(r - math.log(2)) < 1e-9


def test_reward_identical_particles_zero():
    parts = np.tile([1.1, math.log(0.4)], (7, 1))
    ps = ParticleSet(parts, np.full(7, 1 / 7))
    assert abs(expected_reward([0.2, 0.1], ps, LAYOUT1, 1.0, 0.5)) < 1e-9


def test_reward_duplication_invariant():
    rng = np.random.default_rng(0)
    parts = np.column_stack([rng.uniform(0, 2, 30), rng.normal(-0.7, 0.3, 30)])
    w = rng.random(30)
    w /= w.sum()
    a = expected_reward([0.3, 0.0], ParticleSet(parts, w), LAYOUT1, 1.0, 0.5)
    b = expected_reward([0.3, 0.0], ParticleSet(np.repeat(parts, 2, axis=0), np.repeat(w / 2, 2)), LAYOUT1, 1.0, 0.5)
    assert a == pytest.approx(b, abs=1e-12)


def test_reward_nonnegative_many_posteriors():
    rng = np.random.default_rng(7)
    layout = BasisLayout([[0, 0], [2, 0], [0, 2]], [2.0, 2.0, 2.0])
    worst = math.inf
    for _ in range(10_000 // 100):
        n = 20
        parts = np.column_stack([rng.uniform(0, 3, (n, 3)), rng.normal(-0.5, 1.0, n)])
        w = rng.random(n) ** 3
        w /= w.sum()
        feats = layout.features(rng.uniform(-1, 3, (100, 2))).T
        for beta in (0.5,):
            worst = min(worst, reward_terms(parts, w, feats, 1.0, beta).min())
    assert worst >= -1e-9


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 3.0).filter(lambda b: abs(b - 1) > 1e-3))
def test_reward_nonnegative_property(seed, beta):
    rng = np.random.default_rng(seed)
    parts = np.column_stack([rng.uniform(0, 2, 15), rng.normal(-0.5, 0.5, 15)])
    w = rng.random(15)
    w /= w.sum()
    feats = LAYOUT1.features(rng.uniform(-2, 2, (10, 2))).T
    assert reward_terms(parts, w, feats, 1.0, beta).min() >= -1e-9


# ------------------------------------------------------------- selection

def _uninformed_set(n=50, seed=0):
    rng = np.random.default_rng(seed)
    parts = np.column_stack([rng.uniform(0, 2, n), np.full(n, math.log(0.5))])
    return ParticleSet(parts, np.full(n, 1 / n))


def test_select_single_candidate():
    # ring points all fall outside a tiny region
    p = ASParams(Rect(0, 0, 1, 1), epsilon=0.0, step=5.0)
    prop = select_waypoint([0.5, 0.5], _uninformed_set(), p, LAYOUT1, 1.0, np.random.default_rng(0))
    assert np.array_equal(prop.candidate, [0.5, 0.5]) and not prop.explored


def test_select_argmax_exploit():
    p = ASParams(Rect(-5, -5, 5, 5), epsilon=0.0, step=1.5)
    ps = _uninformed_set()
    prop = select_waypoint([1.5, 0.0], ps, p, LAYOUT1, 1.0, np.random.default_rng(0))
    cands, _ = candidate_set([1.5, 0.0], p)
    scores = [expected_reward(c, ps, LAYOUT1, 1.0, 0.5) for c in cands]
    assert np.array_equal(prop.candidate, cands[int(np.argmax(scores))])
    assert prop.reward == pytest.approx(max(scores))


def test_select_empty_holds_position():
    p = ASParams(REGION, obstacles=[rect_vertices(1, 1, 9, 9)], epsilon=0.0)
    prop = select_waypoint([5.0, 5.0], _uninformed_set(), p, LAYOUT1, 1.0, np.random.default_rng(0))
    assert prop.reward == -math.inf and np.array_equal(prop.candidate, [5, 5])


def test_exploration_rate():
    p = ASParams(REGION, epsilon=0.01)
    rng = np.random.default_rng(3)
    ps = _uninformed_set(10)
    n = sum(select_waypoint([5, 5], ps, p, LAYOUT1, 1.0, rng).explored for _ in range(20_000))
    assert abs(n / 20_000 - 0.01) < 4 * math.sqrt(0.01 * 0.99 / 20_000)


def test_exploration_uniform_over_free_cells():
    obstacle = rect_vertices(3.0, 3.0, 5.0, 7.0)
    p = ASParams(REGION, obstacles=[obstacle], epsilon=1.0, clearance=0.35)
    rng = np.random.default_rng(11)
    ps = _uninformed_set(5)
    pts = np.array([select_waypoint([8, 8], ps, p, LAYOUT1, 1.0, rng).candidate for _ in range(10_000)])
    for x, y in pts:
        assert p.is_free([x, y])[0]
    # compare counts only over unit cells lying wholly inside the free region
    counts = {}
    for x, y in pts:
        counts[(int(x), int(y))] = counts.get((int(x), int(y)), 0) + 1
    full = [(i, j) for i in range(10) for j in range(10)
            if p.free_space.contains(box(i, j, i + 1, j + 1))]
    obs = np.array([counts.get(c, 0) for c in full])
    assert len(full) > 40
    _, pval = stats.chisquare(obs)
    assert pval > 1e-3


def test_exploration_sentinel_wins():
    props = [Proposal(0, [1, 1], 5.0), Proposal(1, [2, 2], math.inf, True), Proposal(2, [3, 3], math.inf, True)]
    assert np.array_equal(consensus_select(props), [2, 2])


# ------------------------------------------------------------- consensus

def test_consensus_basic():
    assert np.array_equal(consensus_select([Proposal(4, [1, 2], 0.3)]), [1, 2])
    props = [Proposal(0, [0, 0], 0.1), Proposal(1, [1, 1], 0.7), Proposal(2, [2, 2], 0.3)]
    assert np.array_equal(consensus_select(props), [1, 1])
    with pytest.raises(ValueError):
        consensus_select([])


def test_consensus_tie_lowest_agent_all_orders():
    props = [Proposal(2, [2, 2], 0.5), Proposal(0, [0, 0], 0.5), Proposal(1, [1, 1], 0.2)]
    outs = {consensus_select(list(p)).tobytes() for p in itertools.permutations(props)}
    assert outs == {np.array([0.0, 0.0]).tobytes()}


def test_consensus_randomized_agreement_and_feasibility():
    rng = np.random.default_rng(5)
    obstacles = [rect_vertices(2, 2, 4, 6), rect_vertices(6, 1, 8, 3)]
    p = ASParams(REGION, obstacles=obstacles, epsilon=0.2, clearance=0.35)
    parts = np.column_stack([rng.uniform(0, 2, (20, 2)), np.full(20, math.log(0.5))])
    ps = ParticleSet(parts, np.full(20, 1 / 20))
    layout = BasisLayout([[3, 3], [7, 7]], [4.0, 4.0])
    for _ in range(1000):
        n = int(rng.integers(1, 6))
        props = []
        for a in range(n):
            while True:
                loc = rng.uniform(0, 10, 2)
                if p.is_free(loc)[0]:
                    break
            props.append(select_waypoint(loc, ps, p, layout, 1.0, rng, agent_id=a))
        if rng.random() < 0.3:
            props.append(Proposal(n, props[0].candidate, props[0].reward))   # exact tie
        picks = {consensus_select([props[k] for k in rng.permutation(len(props))]).tobytes() for _ in range(4)}
        assert len(picks) == 1
        chosen = np.frombuffer(picks.pop())
        if np.isfinite(max(q.reward for q in props)) or any(q.explored for q in props):
            assert p.is_free(chosen)[0]


# ------------------------------------------------------ information gain

def _toy_variance_run(greedy: bool, seed: int, steps: int = 25):
    rng = np.random.default_rng(seed)
    fp = FusionParams(n_particles=300, prior=Prior(0.0, 2.0, math.log(NOISE_STD), 0.0))
    ps = init_particles(fp, 1, rng)
    region = Rect(-4, -4, 4, 4)
    p = ASParams(region, epsilon=0.0, step=1.5)
    loc = np.array([3.0, 3.0])
    for _ in range(steps):
        if greedy:
            loc = select_waypoint(loc, ps, p, TOY_LAYOUT, TAU, rng).candidate
        else:
            loc = rng.uniform(-4, 4, 2)
        y = sample_measurement(TRUTH, loc, rng)
        ps = fuse_and_update(ps, [], BinaryObservation(loc, binarize(y, TAU)), fp, TOY_LAYOUT, TAU, rng)
    m = estimate_field(ps).gains_hat[0]
    return float(ps.weights @ (ps.particles[:, 0] - m) ** 2)


def test_greedy_sensing_beats_random_on_toy():
    greedy = np.mean([_toy_variance_run(True, s) for s in range(20)])
    random = np.mean([_toy_variance_run(False, s) for s in range(20)])
    assert greedy <= random
