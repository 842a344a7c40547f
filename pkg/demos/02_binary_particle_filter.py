"""
Estimating a field from one-bit readings
========================================

A sensor only reports whether the concentration is above a threshold.
With a single basis function we can compare the particle filter against
exact Bayes on a fine grid and watch the gap shrink as particles are added.
"""
import math

import numpy as np
from scipy.special import ndtr

from swarmsense.estimator import FusionParams, Prior, estimate_field, fuse_and_update, init_particles
from swarmsense.field import BasisLayout, BinaryObservation, GasFieldSpec, binarize, sample_measurement

layout = BasisLayout([[0.0, 0.0]], [1.0])
noise = math.sqrt(0.32)
truth = GasFieldSpec(layout, [1.6], noise, 1.0)

rng = np.random.default_rng(0)
bits = [binarize(sample_measurement(truth, [0.0, 0.0], rng), 1.0) for _ in range(100)]
print(f"{sum(bits)} of {len(bits)} readings above threshold")

# exact posterior mean on a grid, uniform prior on [0, 2]
grid = np.linspace(0, 2, 2001)
p1 = 1 - ndtr((1.0 - grid) / noise)
logp = sum(bits) * np.log(p1) + (len(bits) - sum(bits)) * np.log1p(-p1)
post = np.exp(logp - logp.max())
exact = float((grid * post).sum() / post.sum())
print(f"grid Bayes posterior mean {exact:.4f}")

for n in (100, 1000, 10000):
    params = FusionParams(n_particles=n, prior=Prior(0.0, 2.0, math.log(noise), 0.0))
    frng = np.random.default_rng(1)
    ps = init_particles(params, 1, frng)
    for k, b in enumerate(bits):
        ps = fuse_and_update(ps, [], BinaryObservation([0.0, 0.0], b, time=float(k)), params, layout, 1.0, frng)
    est = estimate_field(ps).gains_hat[0]
    print(f"N = {n:5d}: estimate {est:.4f}, error vs exact {abs(est - exact):.4f}")
