"""Single-basis toy problem shared by estimator tests and the acceptance suite."""
import math

import numpy as np
from scipy.special import ndtr

from swarmsense.estimator import FusionParams, Prior, estimate_field, fuse_and_update, init_particles
from swarmsense.field import BasisLayout, BinaryObservation, GasFieldSpec, binarize, sample_measurement

TRUE_GAIN = 1.6
NOISE_STD = math.sqrt(0.32)
TAU = 1.0
LAYOUT = BasisLayout([[0.0, 0.0]], [1.0])
TRUTH = GasFieldSpec(LAYOUT, [TRUE_GAIN], NOISE_STD, TAU)


def toy_bits(n_obs, seed):
    rng = np.random.default_rng(seed)
    return [binarize(sample_measurement(TRUTH, [0.0, 0.0], rng), TAU) for _ in range(n_obs)]


def grid_posterior_mean(bits, low=0.0, high=2.0):
    """Exact Bayes on a 0.001 grid over [0, 3]; uniform prior on [low, high]."""
    grid = np.arange(0.0, 3.0 + 5e-4, 0.001)
    prior = ((grid >= low) & (grid <= high)).astype(float)
    p1 = 1.0 - ndtr((TAU - grid) / NOISE_STD)
    ones = sum(bits)
    zeros = len(bits) - ones
    with np.errstate(divide="ignore"):
        logpost = np.log(prior) + ones * np.log(p1) + zeros * np.log1p(-p1)
    logpost -= logpost.max()
    post = np.exp(logpost)
    return float((grid * post).sum() / post.sum())


def run_toy_filter(bits, n_particles, seed):
    params = FusionParams(n_particles=n_particles,
                          prior=Prior(0.0, 2.0, math.log(NOISE_STD), 0.0))
    rng = np.random.default_rng(seed)
    ps = init_particles(params, 1, rng)
    for k, bit in enumerate(bits):
        obs = BinaryObservation([0.0, 0.0], bit, time=float(k))
        ps = fuse_and_update(ps, [], obs, params, LAYOUT, TAU, rng)
    return float(estimate_field(ps).gains_hat[0]), ps
