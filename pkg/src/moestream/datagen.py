"""Seeded synthetic truths and samplers for benchmark experiments."""

from __future__ import annotations

import csv

import numpy as np

from .gaussian import (
    GaussianDims,
    GaussianParams,
    gating_features_batch,
    mean_features_batch,
)
from .logistic import LogisticDims, LogisticParams

COVARIATE_LAWS = ("uniform", "normal")


def lowdim_truth():
    """Two-expert planar benchmark truth.

    Gating score 8 * x1 routes by the sign of the first covariate; the expert
    means have slopes -2.5 and +2.5 on x1 and unit noise variance.
    """
    dims = GaussianDims(
        n_experts=2, n_covariates=2, n_targets=1, gating_degree=1, mean_degree=1
    )
    omega = np.zeros(dims.gating_len)
    omega[1] = 8.0  # coefficient of x1^1 in expert 1's score
    upsilon = np.zeros((2, 1, dims.mean_feature_len))
    upsilon[0, 0, 2] = -2.5  # x1 slope, expert 1
    upsilon[1, 0, 2] = 2.5  # x1 slope, expert 2
    sigma2 = np.ones((2, 1))
    return GaussianParams(dims, omega, upsilon, sigma2)


def highdim_truth(n_experts, mean_degree, gating_degree, n_covariates, n_targets, seed):
    """Seeded higher-dimensional truth.

    Variances are drawn Uniform(0.5, 1.5) with one child seed per entry; mean
    coefficients are Uniform(1.5, 5) on the first covariate only, sign-flipped
    for experts beyond the first at positive degree; the gating block is zero
    except for a single coefficient of 8 on x1^1.
    """
    dims = GaussianDims(n_experts, n_covariates, n_targets, gating_degree, mean_degree)
    sigma2 = np.zeros((n_experts, n_targets))
    for k in range(1, n_experts + 1):
        for q in range(1, n_targets + 1):
            rng = np.random.default_rng(seed + k * n_targets + q)
            sigma2[k - 1, q - 1] = rng.uniform(0.5, 1.5)

    upsilon = np.zeros((n_experts, n_targets, dims.mean_feature_len))
    qp = n_targets * n_covariates
    for k in range(1, n_experts + 1):
        for d in range(0, mean_degree + 1):
            for q in range(1, n_targets + 1):
                for p in range(1, n_covariates + 1):
                    child = 2 * seed + k * (mean_degree + 1) * qp + d * qp + q * n_covariates + p
                    value = 0.0
                    if p == 1:
                        value = np.random.default_rng(child).uniform(1.5, 5.0)
                    if k > 1 and d > 0:
                        value = -value
                    upsilon[k - 1, q - 1, d * n_covariates + (p - 1)] = value

    omega = np.zeros(dims.gating_len)
    if dims.gating_len > 0 and gating_degree >= 1:
        omega[1] = 8.0  # expert 1, covariate 1, degree 1
    return GaussianParams(dims, omega, upsilon, sigma2)


def _draw_covariates(rng, n, p, covariate_law):
    if covariate_law == "uniform":
        return rng.uniform(-1.0, 1.0, size=(n, p))
    if covariate_law == "normal":
        return rng.standard_normal(size=(n, p))
    raise ValueError(f"unknown covariate law {covariate_law!r}")


def _gating_probs_batch(omega, X, n_experts, gating_degree):
    from scipy.special import logsumexp

    n = len(X)
    if n_experts == 1:
        return np.ones((n, 1))
    xg = gating_features_batch(X, gating_degree)
    w = xg @ omega.reshape(n_experts - 1, -1).T
    z = np.concatenate([w, np.zeros((n, 1))], axis=1)
    return np.exp(z - logsumexp(z, axis=1, keepdims=True))


def _categorical_rows(rng, probs):
    """One categorical draw per row of a probability matrix."""
    u = rng.random(len(probs))
    return np.minimum(
        (u[:, None] >= np.cumsum(probs, axis=1)).sum(axis=1), probs.shape[1] - 1
    )


def sample_gaussian(theta, n, seed, covariate_law="uniform"):
    """Draw (X, Y, labels) from a Gaussian mixture-of-experts truth.

    Labels record which expert generated each row; estimators never see them.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    theta.validate()
    d = theta.dims
    rng = np.random.default_rng(seed)
    X = _draw_covariates(rng, n, d.n_covariates, covariate_law)
    gate = _gating_probs_batch(theta.omega, X, d.n_experts, d.gating_degree)
    labels = _categorical_rows(rng, gate)
    xr = mean_features_batch(X, d.mean_degree)
    mu = np.einsum("kql,nl->nkq", theta.upsilon, xr)[np.arange(n), labels]
    noise = rng.standard_normal((n, d.n_targets))
    Y = mu + np.sqrt(theta.sigma2[labels]) * noise
    return X, Y, labels


def sample_logistic(theta, n, seed, covariate_law="uniform"):
    """Draw (X, y, labels) with categorical targets y in 1..M."""
    if n < 1:
        raise ValueError("need at least one sample")
    from scipy.special import logsumexp

    d = theta.dims
    rng = np.random.default_rng(seed)
    X = _draw_covariates(rng, n, d.n_covariates, covariate_law)
    gate = _gating_probs_batch(theta.omega, X, d.n_experts, d.gating_degree)
    labels = _categorical_rows(rng, gate)
    xr = mean_features_batch(X, d.expert_degree)
    scores = np.einsum(
        "kml,nl->nkm",
        theta.upsilon.reshape(d.n_experts, d.n_classes - 1, d.expert_feature_len),
        xr,
    )
    scores = np.concatenate([scores, np.zeros((n, d.n_experts, 1))], axis=2)
    probs = np.exp(scores - logsumexp(scores, axis=2, keepdims=True))
    probs = probs[np.arange(n), labels]
    y = _categorical_rows(rng, probs) + 1
    return X, y, labels


def logistic_demo_truth():
    """Separable two-expert, two-class truth used by the discrete demos."""
    dims = LogisticDims(
        n_experts=2, n_covariates=2, n_classes=2, gating_degree=1, expert_degree=1
    )
    omega = np.zeros(dims.gating_len)
    omega[1] = 8.0
    upsilon = np.zeros((2, dims.per_expert_len))
    # Expert 1 votes class 1 when x2 > 0, expert 2 the opposite.
    upsilon[0, 3] = 6.0  # x2 slope inside the single free class block
    upsilon[1, 3] = -6.0
    return LogisticParams(dims, omega, upsilon)


def write_dataset_csv(path, X, Y, labels=None, discrete=False):
    """CSV emission: x1..xP, then y1..yQ (or y_class), optional label column.

    Floats carry 17 significant digits so a read/re-write round-trip is
    lossless.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if discrete:
        y_cols = ["y_class"]
        Y = np.asarray(Y, dtype=int).reshape(n, 1)
    else:
        Y = np.asarray(Y, dtype=float).reshape(n, -1)
        y_cols = [f"y{j + 1}" for j in range(Y.shape[1])]
    header = [f"x{j + 1}" for j in range(p)] + y_cols
    if labels is not None:
        header.append("label")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(n):
            row = [format(v, ".17g") for v in X[i]]
            if discrete:
                row.append(str(int(Y[i, 0])))
            else:
                row.extend(format(v, ".17g") for v in Y[i])
            if labels is not None:
                row.append(str(int(labels[i])))
            writer.writerow(row)


def read_dataset_csv(path):
    """Read a dataset CSV back into (X, Y, labels); Y is int for y_class."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    x_cols = [i for i, name in enumerate(header) if name.startswith("x")]
    discrete = "y_class" in header
    if discrete:
        y_cols = [header.index("y_class")]
    else:
        y_cols = [i for i, name in enumerate(header) if name.startswith("y")]
    label_col = header.index("label") if "label" in header else None
    X = np.array([[float(row[i]) for i in x_cols] for row in rows])
    if discrete:
        Y = np.array([int(row[y_cols[0]]) for row in rows])
    else:
        Y = np.array([[float(row[i]) for i in y_cols] for row in rows])
    labels = (
        np.array([int(row[label_col]) for row in rows]) if label_col is not None else None
    )
    return X, Y, labels
