"""Shared helpers: random model points, samples, finite differences."""

import numpy as np
import pytest

from moestream.gaussian import GaussianParams
from moestream.logistic import LogisticParams


def random_gaussian_params(rng, dims, sigma_range=(0.3, 3.0), scale=1.0):
    return GaussianParams(
        dims,
        scale * rng.standard_normal(dims.gating_len),
        scale * rng.standard_normal((dims.n_experts, dims.n_targets, dims.mean_feature_len)),
        rng.uniform(*sigma_range, size=(dims.n_experts, dims.n_targets)),
    )


def random_logistic_params(rng, dims, scale=1.0):
    return LogisticParams(
        dims,
        scale * rng.standard_normal(dims.gating_len),
        scale * rng.standard_normal((dims.n_experts, dims.per_expert_len)),
    )


def random_gaussian_sample(rng, dims, y_scale=2.0):
    x = rng.uniform(-1.0, 1.0, size=dims.n_covariates)
    y = y_scale * rng.standard_normal(dims.n_targets)
    return x, y


def random_logistic_sample(rng, dims):
    x = rng.uniform(-1.0, 1.0, size=dims.n_covariates)
    y = int(rng.integers(1, dims.n_classes + 1))
    return x, y


def central_difference(fn, v, h=1e-5):
    """Central finite-difference gradient of a scalar function of a vector."""
    v = np.asarray(v, dtype=float)
    grad = np.zeros_like(v)
    for i in range(v.size):
        up, down = v.copy(), v.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (fn(up) - fn(down)) / (2 * h)
    return grad


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
