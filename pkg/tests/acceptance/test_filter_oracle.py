"""Particle filter against the exact Kalman posterior on a linear-Gaussian problem."""
# pylint: disable=missing-function-docstring

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from sat_planner.belief import (
    ParticleBelief,
    mean_estimate,
    predict,
    resample_low_variance,
    reweight,
    should_resample,
)

pytestmark = pytest.mark.slow

N_PARTICLES = 10_000
SEEDS = range(50)
STEPS = 5
Q = 0.1 * np.eye(2)
R = 0.5 * np.eye(2)
M0 = np.array([5.0, -2.0])
P0 = np.eye(2)


def _run(seed):
    """Per-step PF mean minus Kalman mean, shape ``(STEPS, 2)``."""
    rng = np.random.default_rng(seed)
    truth = rng.multivariate_normal(M0, P0)
    particles = ParticleBelief.uniform(rng.multivariate_normal(M0, P0, size=N_PARTICLES))
    mean, cov = M0.copy(), P0.copy()
    out = np.empty((STEPS, 2))
    for t in range(STEPS):
        if t:
            truth = rng.multivariate_normal(truth, Q)
            particles = predict(particles, Q, rng)
            cov = cov + Q
        z = rng.multivariate_normal(truth, R)

        particles = reweight(particles, multivariate_normal.logpdf(particles.states, mean=z, cov=R))
        gain = cov @ np.linalg.inv(cov + R)
        mean = mean + gain @ (z - mean)
        cov = (np.eye(2) - gain) @ cov

        estimate = mean_estimate(particles)
        out[t] = (estimate.x - mean[0], estimate.y - mean[1])
        if should_resample(particles, 0.5):
            particles = resample_low_variance(particles, rng)
    return out


def test_particle_mean_tracks_kalman_mean():
    diffs = np.stack([_run(seed) for seed in SEEDS])
    bias = diffs.mean(axis=0)
    stderr = diffs.std(axis=0, ddof=1) / np.sqrt(len(SEEDS))
    assert np.all(np.abs(bias) <= 3 * stderr)
    assert np.all(np.abs(diffs) < 0.1)
