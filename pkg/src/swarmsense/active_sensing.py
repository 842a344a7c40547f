"""Entropy-driven next-measurement selection and swarm-wide agreement."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import shapely
from scipy.special import ndtr

from .estimator import LIKELIHOOD_FLOOR, ParticleSet
from .field import BasisLayout
from .geometry import Rect, inflate


@dataclass
class ASParams:
    region: Rect
    obstacles: list = field(default_factory=list)
    beta: float = 0.5
    epsilon: float = 0.01
    step: float = 1.5           # radial step between candidate rings (m)
    n_steps: int = 1
    n_dirs: int = 10
    clearance: float = 0.35     # obstacle inflation: robot radius + margin

    def __post_init__(self):
        if self.beta < 0 or self.beta == 1.0:
            raise ValueError("beta must be non-negative and different from 1")
        if self.beta == 0.0:
            raise ValueError("beta = 0 gives a constant reward")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.step <= 0 or self.n_steps < 1 or self.n_dirs < 1:
            raise ValueError("step must be positive, n_steps and n_dirs at least 1")
        r = self.region
        free = shapely.box(r.xmin, r.ymin, r.xmax, r.ymax)
        if self.obstacles:
            free = free.difference(inflate(self.obstacles, self.clearance))
        shapely.prepare(free)
        self._free = free

    @property
    def free_space(self):
        """Shapely geometry of the admissible measurement region."""
        return self._free

    def is_free(self, points) -> np.ndarray:
        p = np.asarray(points, float).reshape(-1, 2)
        return shapely.contains_xy(self._free, p[:, 0], p[:, 1])


@dataclass
class Proposal:
    agent_id: int
    candidate: np.ndarray
    reward: float
    explored: bool = False

    def __post_init__(self):
        self.candidate = np.asarray(self.candidate, dtype=float).reshape(2)


def candidate_set(l_k, params: ASParams) -> tuple[np.ndarray, bool]:
    """Ring candidates around ``l_k`` inside the free region.

    Returns ``(points, sparse)`` where ``sparse`` flags that nothing beyond
    the current location survived.
    """
    l_k = np.asarray(l_k, float)
    pts = [l_k]
    for j in range(1, params.n_steps + 1):
        for n in range(params.n_dirs):
            a = 2.0 * math.pi * n / params.n_dirs
            pts.append(l_k + j * params.step * np.array([math.cos(a), math.sin(a)]))
    pts = np.array(pts)
    keep = params.is_free(pts)
    out = pts[keep]
    return out, not keep[1:].any()


def reward_terms(particles: np.ndarray, weights: np.ndarray, features: np.ndarray,
                 threshold: float, beta: float) -> np.ndarray:
    """Rényi reward for every column of ``features`` (shape ``(I, C)``)."""
    conc = particles[:, :-1] @ features                    # (N, C)
    sigma = np.exp(particles[:, -1])[:, None]
    p0 = ndtr((threshold - conc) / sigma)
    total = np.zeros(conc.shape[1])
    for p in (p0, 1.0 - p0):
        z1 = np.maximum(weights @ p, LIKELIHOOD_FLOOR)
        zb = np.maximum(weights @ p ** beta, LIKELIHOOD_FLOOR)
        total += z1 * (np.log(zb) - beta * np.log(z1))
    return total / (beta - 1.0)


def expected_reward(candidate, ps: ParticleSet, layout: BasisLayout, threshold: float,
                    beta: float = 0.5) -> float:
    """One-step expected Rényi divergence of order ``beta`` at ``candidate``."""
    feats = layout.features(candidate).T
    return float(reward_terms(ps.particles, ps.weights, feats, threshold, beta)[0])


def sample_free(params: ASParams, rng: np.random.Generator, max_tries: int = 10_000) -> np.ndarray | None:
    r = params.region
    for _ in range(max_tries):
        p = np.array([rng.uniform(r.xmin, r.xmax), rng.uniform(r.ymin, r.ymax)])
        if params.is_free(p)[0]:
            return p
    return None


def select_waypoint(l_k, ps: ParticleSet, params: ASParams, layout: BasisLayout,
                    threshold: float, rng: np.random.Generator, agent_id: int = 0) -> Proposal:
    """Explore with probability epsilon, otherwise the best-scoring candidate."""
    explore = rng.random() < params.epsilon
    if explore:
        p = sample_free(params, rng)
        if p is not None:
            return Proposal(agent_id, p, math.inf, explored=True)
    cands, _ = candidate_set(l_k, params)
    if len(cands) == 0:
        return Proposal(agent_id, np.asarray(l_k, float), -math.inf)
    scores = reward_terms(ps.particles, ps.weights, layout.features(cands).T, threshold, params.beta)
    k = int(np.argmax(scores))
    return Proposal(agent_id, cands[k], float(scores[k]))


def consensus_select(proposals) -> np.ndarray:
    """Highest reward wins; equal rewards go to the lowest agent id."""
    proposals = list(proposals)
    if not proposals:
        raise ValueError("consensus needs at least one proposal")
    best = min(proposals, key=lambda p: (-p.reward, p.agent_id))
    return best.candidate.copy()


DECISION_HEADER = ("epoch", "agent", "cand_x", "cand_y", "reward", "explored", "chosen_x", "chosen_y")
