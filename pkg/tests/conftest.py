"""Shared fixtures and helpers for the test suite."""
import numpy as np
import pytest

from ctren.core import Dims
from ctren.dynamics import lipschitz_bound
from ctren.gradients import SampledExperiment, explicit_and_cert, random_free


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def make_experiments(rng, n, p, n_exp=2, n_samples=4, t_lo=0.05, t_hi=0.5):
    """Small random sample sets for loss/gradient tests."""
    exps = []
    for _ in range(n_exp):
        times = np.sort(rng.uniform(t_lo, t_hi, n_samples))
        exps.append(SampledExperiment(x0=rng.normal(size=n), times=times,
                                      targets=rng.normal(size=(n_samples, p))))
    return exps


def draw_tame_free(spec, rng, h, zero_bias=False, margin=1.0):
    """Random free parameters whose model is comfortably resolved by a fixed
    step h (Lipschitz constant below margin / h); redraws otherwise so the
    finite-difference oracle is not polluted by discretization instability."""
    while True:
        free = random_free(spec, rng, zero_bias=zero_bias)
        params, _ = explicit_and_cert(spec, free)
        if lipschitz_bound(params) * h < margin:
            return free
