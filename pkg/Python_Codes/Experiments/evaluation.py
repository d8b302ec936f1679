"""
evaluation.py
Monte-Carlo MSE of a trained (or model-based) system on fresh draws of
target, observations, fading and noise.
"""

import numpy as np

from codebook import expand_codebook
from mathkit import UsageError
from system_model import effective_channel, sample_batch, sample_channel, synthesize_rx

MIN_EVAL_N = 1000
CHUNK = 10_000


def squared_errors(system, scenario, n, rng, chunk=CHUNK):
    """(s_hat - s)^2 for n independent samples, drawn in fixed-size chunks."""
    C = expand_codebook(system.assignment)
    out = []
    remaining = n
    while remaining > 0:
        b = min(chunk, remaining)
        batch = sample_batch(scenario.prior, scenario.obs_model, scenario.K, b, rng)
        h = sample_channel(scenario.channel, (b, scenario.K), rng)
        Y = synthesize_rx(C, effective_channel(batch.w, h, scenario.M), scenario.channel.noise_std, rng)
        out.append((np.asarray(system.estimate(Y), dtype=np.float64) - batch.s) ** 2)
        remaining -= b
    return np.concatenate(out)


def evaluate_mse(system, scenario=None, n=100_000, rng=None, min_n=MIN_EVAL_N):
    """
    Args:
        system: anything with `.assignment`, `.scenario` and `.estimate(Y)`
        scenario: evaluation scenario; defaults to the one the system was built for
        n: number of samples (>= 1000)
        rng: numpy Generator

    Returns:
        (mse, standard error of the mean)
    """
    if n < min_n:
        raise UsageError(f"evaluation needs at least {min_n} samples, got {n}")
    if rng is None:
        raise UsageError("evaluate_mse needs an explicit random generator")
    scenario = system.scenario if scenario is None else scenario
    err = squared_errors(system, scenario, n, rng)
    return float(err.mean()), float(err.std(ddof=1) / np.sqrt(n))
