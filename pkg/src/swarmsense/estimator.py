"""Per-agent collaborative particle filter over basis gains and sensor noise.

Each particle is a row ``[gain_1, ..., gain_I, log_noise_std]``. Agents pool
their own cloud with the clouds received from neighbours, shrink every
particle toward the pooled mean, reweight by the newest binary reading,
resample, jitter with a shrunken-covariance Gaussian kernel and correct the
weights for the jitter.
"""
from __future__ import annotations

import csv
import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .field import BasisLayout, BinaryObservation

LIKELIHOOD_FLOOR = 1e-12
_HEADER = struct.Struct("<iiii")


@dataclass
class Particle:
    gains: np.ndarray
    log_noise: float

    def to_vector(self) -> np.ndarray:
        return np.append(np.asarray(self.gains, float), self.log_noise)

    @classmethod
    def from_vector(cls, v) -> "Particle":
        v = np.asarray(v, float)
        return cls(v[:-1].copy(), float(v[-1]))


@dataclass
class ParticleSet:
    particles: np.ndarray          # (N, I + 1)
    weights: np.ndarray            # (N,)
    agent_id: int = 0
    epoch: int = 0

    def __post_init__(self):
        self.particles = np.asarray(self.particles, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.particles.ndim != 2 or self.particles.shape[1] < 2:
            raise ValueError("particles must be (N, I + 1)")
        if len(self.weights) != len(self.particles):
            raise ValueError("one weight per particle")
        if len(self.weights) < 2:
            raise ValueError("need at least two particles")

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def n_basis(self) -> int:
        return self.particles.shape[1] - 1

    def copy(self) -> "ParticleSet":
        return ParticleSet(self.particles.copy(), self.weights.copy(), self.agent_id, self.epoch)


@dataclass
class Prior:
    """Independent uniform gains and a normal prior on log noise std."""

    gain_low: float = 0.0
    gain_high: float = 2.0
    log_noise_mean: float = math.log(0.5)
    log_noise_std: float = 0.5

    @classmethod
    def for_threshold(cls, threshold: float) -> "Prior":
        return cls(gain_low=0.0, gain_high=2.0 * threshold)


@dataclass
class FusionParams:
    n_particles: int = 1000
    shrinkage: float = 0.98
    eta: float = 0.0
    prior: Prior = field(default_factory=Prior)

    def __post_init__(self):
        if not 0.0 < self.shrinkage < 1.0:
            raise ValueError("shrinkage must lie in (0, 1)")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.n_particles < 2:
            raise ValueError("n_particles must be at least 2")

    @property
    def bandwidth(self) -> float:
        return math.sqrt(1.0 - self.shrinkage ** 2)


@dataclass
class FieldEstimate:
    gains_hat: np.ndarray
    noise_var_hat: float


def init_particles(params: FusionParams, n_basis: int, rng: np.random.Generator,
                   agent_id: int = 0) -> ParticleSet:
    prior = params.prior
    n = params.n_particles
    if prior.gain_high == prior.gain_low and prior.log_noise_std == 0:
        warnings.warn("degenerate prior: every particle starts identical", stacklevel=2)
    gains = rng.uniform(prior.gain_low, prior.gain_high, size=(n, n_basis))
    log_noise = prior.log_noise_mean + prior.log_noise_std * rng.standard_normal(n)
    particles = np.column_stack([gains, log_noise])
    return ParticleSet(particles, np.full(n, 1.0 / n), agent_id=agent_id, epoch=0)


def bit_likelihood(particles: np.ndarray, features: np.ndarray, bit: int,
                   threshold: float) -> np.ndarray:
    """P(bit | particle) for particles ``(N, I + 1)`` at a location with basis activations ``features``."""
    conc = particles[:, :-1] @ features
    sigma = np.exp(particles[:, -1])
    p0 = ndtr((threshold - conc) / sigma)
    p = p0 if bit == 0 else 1.0 - p0
    return np.clip(p, LIKELIHOOD_FLOOR, 1.0 - LIKELIHOOD_FLOOR)


def obs_likelihood(p, layout: BasisLayout, obs: BinaryObservation, threshold: float):
    """Probability of the observed bit under one particle (float) or an ``(N, I + 1)`` array."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    features = layout.features(obs.location)[0]
    if isinstance(p, Particle):
        return float(bit_likelihood(p.to_vector()[None, :], features, obs.bit, threshold)[0])
    return bit_likelihood(np.atleast_2d(p), features, obs.bit, threshold)


def _normalize(w: np.ndarray) -> np.ndarray:
    total = w.sum()
    if not np.isfinite(total) or total <= 0:
        return np.full(len(w), 1.0 / len(w))
    return w / total


def weighted_covariance(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    w = _normalize(w)
    mean = w @ x
    dx = x - mean
    return (dx * w[:, None]).T @ dx


def _kernel_factor(cov: np.ndarray) -> np.ndarray:
    dim = cov.shape[0]
    cov = 0.5 * (cov + cov.T)
    ridge = 1e-8 * np.trace(cov) / dim
    cov = cov + max(ridge, 1e-300) * np.eye(dim)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(cov)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def fuse_and_update(own: ParticleSet, neighbor_sets, obs: BinaryObservation,
                    params: FusionParams, layout: BasisLayout, threshold: float,
                    rng: np.random.Generator) -> ParticleSet:
    """One collaborative fusion step for the agent owning ``own``.

    ``neighbor_sets`` may or may not contain ``own`` itself; sets from the
    same agent id as ``own`` are ignored in favour of ``own``.
    """
    sets = [own] + [s for s in (neighbor_sets or []) if s.agent_id != own.agent_id]
    pool = np.concatenate([s.particles for s in sets], axis=0)
    pool_w = _normalize(np.concatenate([s.weights for s in sets]))

    s = params.shrinkage
    mean = pool_w @ pool
    centers = s * pool + (1.0 - s) * mean

    features = layout.features(obs.location)[0]
    lik_centers = bit_likelihood(centers, features, obs.bit, threshold)
    center_w = _normalize(lik_centers * pool_w)

    n = params.n_particles
    idx = rng.choice(len(center_w), size=n, replace=True, p=center_w)

    cov = weighted_covariance(own.particles, own.weights)
    factor = _kernel_factor(cov) * params.bandwidth ** ((2.0 - params.eta) / 2.0)
    noise = rng.standard_normal((n, pool.shape[1])) @ factor.T
    new = centers[idx] + noise

    lik_new = bit_likelihood(new, features, obs.bit, threshold)
    weights = _normalize(lik_new / lik_centers[idx])
    return ParticleSet(new, weights, agent_id=own.agent_id, epoch=own.epoch + 1)


def estimate_field(ps: ParticleSet) -> FieldEstimate:
    w = ps.weights
    gains = w @ ps.particles[:, :-1]
    noise_var = float(w @ np.exp(2.0 * ps.particles[:, -1]))
    return FieldEstimate(gains, noise_var)


def broadcast_payload(ps: ParticleSet) -> bytes:
    n, d = ps.particles.shape
    return (_HEADER.pack(ps.agent_id, ps.epoch, n, d)
            + np.ascontiguousarray(ps.particles, dtype="<f8").tobytes()
            + np.ascontiguousarray(ps.weights, dtype="<f8").tobytes())


def decode_payload(payload: bytes) -> ParticleSet:
    agent_id, epoch, n, d = _HEADER.unpack_from(payload, 0)
    off = _HEADER.size
    particles = np.frombuffer(payload, dtype="<f8", count=n * d, offset=off).reshape(n, d)
    weights = np.frombuffer(payload, dtype="<f8", count=n, offset=off + 8 * n * d)
    return ParticleSet(particles.copy(), weights.copy(), agent_id=agent_id, epoch=epoch)


def write_particle_csv(fh, sets) -> None:
    """Debug dump: one row per particle (epoch, agent, index, gains..., log_noise, weight)."""
    sets = list(sets)
    if not sets:
        return
    n_basis = sets[0].n_basis
    writer = csv.writer(fh)
    writer.writerow(["epoch", "agent", "index"]
                    + [f"gain_{i + 1}" for i in range(n_basis)] + ["log_noise", "weight"])
    for ps in sets:
        for i, (row, w) in enumerate(zip(ps.particles, ps.weights)):
            writer.writerow([ps.epoch, ps.agent_id, i] + [repr(float(v)) for v in row]
                            + [repr(float(w))])
