"""Initialization schemes: perturbed truth, k-means, gating warm start, s0."""

from __future__ import annotations

import numpy as np

from . import linalg
from .gaussian import (
    GaussianParams,
    gating_features_batch,
    mean_features_batch,
)

VARIANCE_FLOOR = 1e-8


def perturbed_truth_init(truth, noise_scale, seed):
    """Truth plus scale * standard-normal noise per coordinate.

    Variance entries are redrawn until positive so the perturbed point stays
    in the parameter space.
    """
    if noise_scale < 0:
        raise ValueError("noise_scale must be nonnegative")
    rng = np.random.default_rng(seed)
    omega = truth.omega + noise_scale * rng.standard_normal(truth.omega.shape)
    upsilon = truth.upsilon + noise_scale * rng.standard_normal(truth.upsilon.shape)
    sigma2 = truth.sigma2 + noise_scale * rng.standard_normal(truth.sigma2.shape)
    while np.any(sigma2 <= 0):
        bad = sigma2 <= 0
        sigma2[bad] = truth.sigma2[bad] + noise_scale * rng.standard_normal(bad.sum())
    return GaussianParams(truth.dims, omega, upsilon, sigma2)


def _lloyd(Z, k, rng, max_iter=100):
    """One Lloyd run from random data-point centroids.

    Returns (labels, inertia); an emptied cluster re-seeds the whole run with
    fresh centroids.
    """
    n = len(Z)
    for _attempt in range(20):  # re-seed attempts for empty clusters
        centers = Z[rng.choice(n, size=k, replace=False)].copy()
        labels = None
        emptied = False
        for _sweep in range(max_iter):
            dists = ((Z[:, None, :] - centers[None]) ** 2).sum(axis=2)
            new_labels = dists.argmin(axis=1)
            if np.any(np.bincount(new_labels, minlength=k) == 0):
                emptied = True
                break
            converged = labels is not None and np.array_equal(new_labels, labels)
            labels = new_labels
            for j in range(k):
                centers[j] = Z[labels == j].mean(axis=0)
            if converged:
                break
        if not emptied and labels is not None:
            inertia = float(((Z - centers[labels]) ** 2).sum())
            return labels, inertia
    raise RuntimeError("k-means kept producing empty clusters")


def lloyd_kmeans(Z, k, restarts, seed):
    """Best-of-``restarts`` Lloyd clustering; deterministic under seed."""
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        labels, inertia = _lloyd(np.asarray(Z, dtype=float), k, rng)
        if best is None or inertia < best[1]:
            best = (labels, inertia)
    return best[0]


def kmeans_init(X, Y, dims, restarts=10, seed=0, warm_start_gating=False):
    """Cluster-then-fit initialization for the Gaussian model.

    Clusters the standardized joint (x, y) rows, fits per-cluster polynomial
    means by least squares, uses residual variances for sigma2, and leaves
    the gating at zero unless ``warm_start_gating`` requests a logistic fit
    of the cluster labels.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float).reshape(len(X), dims.n_targets)
    if len(X) < dims.n_experts:
        raise ValueError("need at least one sample per expert")
    Z = np.concatenate([X, Y], axis=1)
    scale = Z.std(axis=0)
    scale[scale == 0] = 1.0
    labels = lloyd_kmeans((Z - Z.mean(axis=0)) / scale, dims.n_experts, restarts, seed)

    feats = mean_features_batch(X, dims.mean_degree)
    upsilon = np.zeros((dims.n_experts, dims.n_targets, dims.mean_feature_len))
    sigma2 = np.zeros((dims.n_experts, dims.n_targets))
    for k in range(dims.n_experts):
        mask = labels == k
        coef, *_ = np.linalg.lstsq(feats[mask], Y[mask], rcond=None)
        upsilon[k] = coef.T
        resid = Y[mask] - feats[mask] @ coef
        sigma2[k] = np.maximum((resid**2).mean(axis=0), VARIANCE_FLOOR)

    if warm_start_gating and dims.n_experts > 1:
        omega = warm_start_omega(X, labels + 1, dims, seed=seed)
    else:
        omega = np.zeros(dims.gating_len)
    return GaussianParams(dims, omega, upsilon, sigma2)


def warm_start_omega(X, labels, dims, max_iter=200, tol=1e-8, seed=0):
    """Gating coefficients from a logistic regression of labels on features.

    Fits the constrained softmax by iterating the quadratic-bound update
    omega <- omega - B_total^{-1} grad, whose fixed curvature matrix sums the
    per-sample bounds; descent is monotone by construction, no external
    solver involved.
    """
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels, dtype=int)
    k = dims.n_experts
    if k < 2:
        raise ValueError("warm start needs at least two experts")
    if len(np.unique(labels)) < 2:
        raise ValueError("labels are degenerate (single class)")
    feats = gating_features_batch(X, dims.gating_degree)
    n, g_len = feats.shape

    bound_total = np.zeros((dims.gating_len, dims.gating_len))
    core = linalg.bohning_corrected_bound(k - 1)
    for i in range(n):
        bound_total += linalg.kron(core, np.outer(feats[i], feats[i]))
    bound_total[np.diag_indices_from(bound_total)] += n * 1e-6

    onehot = np.zeros((n, k - 1))
    for j in range(1, k):
        onehot[labels == j, j - 1] = 1.0

    from scipy.special import logsumexp

    omega = np.zeros(dims.gating_len)
    for _ in range(max_iter):
        w = feats @ omega.reshape(k - 1, g_len).T
        z = np.concatenate([w, np.zeros((n, 1))], axis=1)
        probs = np.exp(z - logsumexp(z, axis=1, keepdims=True))[:, :-1]
        grad = ((probs - onehot)[:, :, None] * feats[:, None, :]).sum(axis=0).reshape(-1)
        if np.max(np.abs(grad)) < tol:
            break
        omega = omega - linalg.solve_psd(bound_total, grad, name="warm-start bound")
    return omega


def multinomial_nll(omega, X, labels, dims):
    """Training objective of :func:`warm_start_omega`, for descent checks."""
    from scipy.special import logsumexp

    feats = gating_features_batch(np.asarray(X, dtype=float), dims.gating_degree)
    k = dims.n_experts
    w = feats @ omega.reshape(k - 1, feats.shape[1]).T
    z = np.concatenate([w, np.zeros((len(feats), 1))], axis=1)
    logp = z - logsumexp(z, axis=1, keepdims=True)
    picked = logp[np.arange(len(feats)), np.asarray(labels, dtype=int) - 1]
    return float(-picked.mean())


def warmup_s0(family, theta, samples):
    """Average of the per-sample statistics over a warm-up batch.

    The admissible set is convex, so the average of member statistics is a
    valid starting point for the recursion.  Callers should resume the step
    counter at the batch size: the average carries that many samples' worth
    of weight, and a counter restarted at zero would let the first streamed
    sample overwrite most of it.
    """
    total = None
    count = 0
    for sample in samples:
        sbar = family.suff_stat(theta, sample)
        total = sbar if total is None else total + sbar
        count += 1
    if count == 0:
        raise ValueError("warm-up batch must be non-empty")
    return total / count
