"""Softmax-gated Gaussian mixture-of-experts model and its streaming surrogate.

Gating weights and expert means are polynomials of the covariates.  The
gating block of every parameter vector is laid out expert-major, then
covariate, then degree, matching the gating feature vector
x_hat = [x_1^0 .. x_1^Dw, ..., x_P^0 .. x_P^Dw].  The expert feature vector
r = vec([x^0, x, ..., x^Dv]) is degree-major (its first P entries are ones).
Expert covariances are diagonal throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, xlogy

from . import linalg
from .engine import SurrogateFamily
from .exceptions import NumericError, ShapeError, SolverError

LOG_2PI = math.log(2.0 * math.pi)
SIGMA_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# dimensions and feature maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianDims:
    """Shape bundle: experts K, covariates P, targets Q, polynomial degrees."""

    n_experts: int
    n_covariates: int
    n_targets: int
    gating_degree: int
    mean_degree: int

    def __post_init__(self):
        if min(self.n_experts, self.n_covariates, self.n_targets) < 1:
            raise ValueError("all dimensions must be positive")
        if min(self.gating_degree, self.mean_degree) < 0:
            raise ValueError("degrees must be nonnegative")

    @property
    def gating_feature_len(self):
        return self.n_covariates * (self.gating_degree + 1)

    @property
    def gating_len(self):
        return (self.n_experts - 1) * self.gating_feature_len

    @property
    def mean_feature_len(self):
        return self.n_covariates * (self.mean_degree + 1)

    @property
    def block_lengths(self):
        k, q, ell = self.n_experts, self.n_targets, self.mean_feature_len
        g = self.gating_len
        return (g, g * g, k * q, k * q * ell, k * q * ell * ell, k * q)

    @property
    def block_offsets(self):
        return np.concatenate([[0], np.cumsum(self.block_lengths)])

    @property
    def stat_len(self):
        return int(sum(self.block_lengths))


def gating_features(x, degree):
    """x_hat: powers 0..degree of each covariate, covariate-major."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return np.power.outer(x, np.arange(degree + 1)).reshape(-1)


def mean_features(x, degree):
    """r = vec([x^0, x, ..., x^degree]): degree-major, covariate-minor."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return np.power.outer(x, np.arange(degree + 1)).reshape(-1, order="F")


def gating_features_batch(X, degree):
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    return np.power(X[:, :, None], np.arange(degree + 1)).reshape(n, -1)


def mean_features_batch(X, degree):
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    pw = np.power(X[:, :, None], np.arange(degree + 1))
    return pw.transpose(0, 2, 1).reshape(n, -1)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass
class GaussianParams:
    """Parameter point (omega, upsilon, sigma2).

    omega: flat gating coefficients of length (K-1) * P * (Dw+1); the last
    expert's block is pinned to zero and not stored, which makes the softmax
    parameters identifiable.  upsilon[k, q] holds the mean coefficients of
    expert k, target q against the feature vector r.  sigma2[k, q] > 0.
    """

    dims: GaussianDims
    omega: np.ndarray
    upsilon: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float).reshape(-1)
        self.upsilon = np.asarray(self.upsilon, dtype=float)
        self.sigma2 = np.asarray(self.sigma2, dtype=float)
        d = self.dims
        if self.omega.size != d.gating_len:
            raise ShapeError(
                f"omega length {self.omega.size}, expected {d.gating_len}"
            )
        expected = (d.n_experts, d.n_targets, d.mean_feature_len)
        if self.upsilon.shape != expected:
            raise ShapeError(f"upsilon shape {self.upsilon.shape}, expected {expected}")
        if self.sigma2.shape != (d.n_experts, d.n_targets):
            raise ShapeError("sigma2 must have shape (K, Q)")

    def validate(self):
        if not np.all(self.sigma2 > 0):
            raise ValueError("sigma2 entries must be strictly positive")
        return self

    def copy(self):
        return GaussianParams(
            self.dims, self.omega.copy(), self.upsilon.copy(), self.sigma2.copy()
        )

    def to_vector(self):
        return np.concatenate(
            [self.omega, self.upsilon.reshape(-1), self.sigma2.reshape(-1)]
        )

    @classmethod
    def from_vector(cls, dims, v):
        v = np.asarray(v, dtype=float)
        d = dims
        g = d.gating_len
        nu = d.n_experts * d.n_targets * d.mean_feature_len
        omega = v[:g]
        upsilon = v[g : g + nu].reshape(d.n_experts, d.n_targets, d.mean_feature_len)
        sigma2 = v[g + nu :].reshape(d.n_experts, d.n_targets)
        return cls(d, omega, upsilon, sigma2)

    def to_json_dict(self):
        d = self.dims
        return {
            "dims": {
                "K": d.n_experts,
                "P": d.n_covariates,
                "Q": d.n_targets,
                "D_W": d.gating_degree,
                "D_V": d.mean_degree,
            },
            "omega": self.omega.tolist(),
            "upsilon": self.upsilon.tolist(),
            "sigma2": self.sigma2.tolist(),
        }

    @classmethod
    def from_json_dict(cls, payload):
        h = payload["dims"]
        dims = GaussianDims(h["K"], h["P"], h["Q"], h["D_W"], h["D_V"])
        return cls(
            dims,
            np.asarray(payload["omega"], dtype=float),
            np.asarray(payload["upsilon"], dtype=float),
            np.asarray(payload["sigma2"], dtype=float),
        )


# ---------------------------------------------------------------------------
# model evaluation
# ---------------------------------------------------------------------------


def _gating_scores(omega, x_hat, dims):
    """Free-expert scores w_1..w_{K-1}; the reference expert scores zero."""
    k = dims.n_experts
    if k == 1:
        return np.zeros(0)
    return omega.reshape(k - 1, dims.gating_feature_len) @ x_hat


def log_gating_probs(omega, x, dims):
    w = _gating_scores(omega, gating_features(x, dims.gating_degree), dims)
    z = np.concatenate([w, [0.0]])
    return z - logsumexp(z)


def gating_probs(omega, x, dims):
    """Mixture weights of the constrained softmax gate; sums to one."""
    return np.exp(log_gating_probs(omega, x, dims))


def expert_means(theta, x):
    """Per-expert mean vectors, shape (K, Q)."""
    r = mean_features(x, theta.dims.mean_degree)
    return theta.upsilon @ r


def _log_expert_densities(theta, x, y):
    mu = expert_means(theta, x)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    resid2 = (y[None, :] - mu) ** 2
    return -0.5 * np.sum(np.log(theta.sigma2) + LOG_2PI + resid2 / theta.sigma2, axis=1)


def _log_joint(theta, sample):
    x, y = sample
    theta.validate()
    lg = log_gating_probs(theta.omega, x, theta.dims)
    return lg + _log_expert_densities(theta, x, y)


def nll(theta, sample):
    """Negative log predictive density, evaluated in log space."""
    return float(-logsumexp(_log_joint(theta, sample)))


def responsibilities(theta, sample):
    """Posterior expert membership probabilities of one observation."""
    lj = _log_joint(theta, sample)
    return np.exp(lj - logsumexp(lj))


def regression_mean(theta, x):
    """Conditional mean: gate-weighted combination of expert means."""
    g = gating_probs(theta.omega, x, theta.dims)
    return g @ expert_means(theta, x)


def nll_batch(theta, X, Y):
    """Vectorized per-sample negative log predictive densities."""
    theta.validate()
    d = theta.dims
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float).reshape(len(X), d.n_targets)
    xg = gating_features_batch(X, d.gating_degree)
    if d.n_experts > 1:
        w = xg @ theta.omega.reshape(d.n_experts - 1, -1).T
        z = np.concatenate([w, np.zeros((len(X), 1))], axis=1)
    else:
        z = np.zeros((len(X), 1))
    lg = z - logsumexp(z, axis=1, keepdims=True)
    xr = mean_features_batch(X, d.mean_degree)
    mu = np.einsum("kql,nl->nkq", theta.upsilon, xr)
    resid2 = (Y[:, None, :] - mu) ** 2
    ld = -0.5 * np.sum(np.log(theta.sigma2)[None] + LOG_2PI + resid2 / theta.sigma2[None], axis=2)
    return -logsumexp(lg + ld, axis=1)


def regression_mean_batch(theta, X):
    d = theta.dims
    X = np.asarray(X, dtype=float)
    xg = gating_features_batch(X, d.gating_degree)
    if d.n_experts > 1:
        w = xg @ theta.omega.reshape(d.n_experts - 1, -1).T
        z = np.concatenate([w, np.zeros((len(X), 1))], axis=1)
    else:
        z = np.zeros((len(X), 1))
    g = np.exp(z - logsumexp(z, axis=1, keepdims=True))
    xr = mean_features_batch(X, d.mean_degree)
    mu = np.einsum("kql,nl->nkq", theta.upsilon, xr)
    return np.einsum("nk,nkq->nq", g, mu)


def gating_curvature(omega, x, dims):
    """Exact Hessian of the gating log-partition: (diag(g)-gg^T) kron xx^T."""
    x_hat = gating_features(x, dims.gating_degree)
    g = gating_probs(omega, x, dims)[: dims.n_experts - 1]
    core = np.diag(g) - np.outer(g, g)
    return linalg.kron(core, np.outer(x_hat, x_hat))


# ---------------------------------------------------------------------------
# surrogate, sufficient statistic, solve
# ---------------------------------------------------------------------------


def surrogate_loss(theta, sample, anchor, epsilon_star=1e-6):
    """Majorizer of the negative log predictive density anchored at ``anchor``.

    Combines the posterior-weighted expert log densities with a quadratic
    upper bound on the gating log-partition; touches ``nll`` exactly at
    theta == anchor and upper-bounds it everywhere else.
    """
    x, y = sample
    d = theta.dims
    theta.validate()
    tau = responsibilities(anchor, sample)
    y = np.atleast_1d(np.asarray(y, dtype=float))

    mu = expert_means(theta, x)
    resid2 = (y[None, :] - mu) ** 2
    expert_term = 0.5 * np.sum(
        tau[:, None] * (np.log(theta.sigma2) + LOG_2PI + resid2 / theta.sigma2)
    )
    entropy = float(np.sum(xlogy(tau, tau)))

    if d.n_experts == 1:
        return entropy + expert_term

    x_hat = gating_features(x, d.gating_degree)
    g_anchor = gating_probs(anchor.omega, x, d)[:-1]
    grad_part = linalg.kron(g_anchor, x_hat)
    w_anchor = _gating_scores(anchor.omega, x_hat, d)
    log_partition = float(logsumexp(np.concatenate([[0.0], w_anchor])))
    bound = linalg.build_B(
        linalg.CurvatureBoundSpec(d.n_experts - 1, x_hat, epsilon_star)
    )
    xi = linalg.kron(tau[:-1], x_hat)
    diff = theta.omega - anchor.omega
    gating_term = (
        log_partition
        - float(anchor.omega @ grad_part)
        + float(theta.omega @ grad_part)
        + 0.5 * float(diff @ bound @ diff)
        - float(theta.omega @ xi)
    )
    return entropy + gating_term + expert_term


def suff_stat(anchor, sample, epsilon_star=1e-6):
    """Per-sample statistic driving the streaming recursion.

    Blocks: gating gradient/curvature pieces (empty for a single expert),
    then the posterior-weighted moments tau kron y^2, -2 tau kron (y kron r),
    tau kron (1_Q kron vec(r r^T)) and tau kron 1_Q.  The third-moment-style
    block is stored so that its (k, q) slice is vec(tau_k r r^T), keeping the
    slices aligned with the per-target solves.
    """
    x, y = sample
    d = anchor.dims
    tau = responsibilities(anchor, sample)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    r = mean_features(x, d.mean_degree)
    ones_q = np.ones(d.n_targets)

    blocks = []
    if d.n_experts > 1:
        x_hat = gating_features(x, d.gating_degree)
        g_hat = gating_probs(anchor.omega, x, d)[:-1]
        bound = linalg.build_B(
            linalg.CurvatureBoundSpec(d.n_experts - 1, x_hat, epsilon_star)
        )
        s1 = linalg.kron(g_hat - tau[:-1], x_hat) - bound @ anchor.omega
        blocks.append(s1)
        blocks.append(linalg.vec(bound) / 2.0)
    else:
        blocks.append(np.zeros(0))
        blocks.append(np.zeros(0))
    blocks.append(linalg.kron(tau, y**2))
    blocks.append(-2.0 * linalg.kron(tau, linalg.kron(y, r)))
    blocks.append(linalg.kron(tau, linalg.kron(ones_q, linalg.vec(np.outer(r, r)))))
    blocks.append(linalg.kron(tau, ones_q))
    return np.concatenate(blocks)


class GaussianSuffStats:
    """Named views into the flat statistic vector."""

    def __init__(self, data, dims):
        data = np.asarray(data, dtype=float)
        if data.size != dims.stat_len:
            raise ShapeError(
                f"statistic length {data.size}, expected {dims.stat_len}"
            )
        self.data = data
        self.dims = dims
        self._off = dims.block_offsets

    def block(self, i):
        return self.data[self._off[i] : self._off[i + 1]]

    @property
    def s1(self):
        return self.block(0)

    @property
    def s2(self):
        return self.block(1)

    @property
    def s3(self):
        return self.block(2)

    @property
    def s4(self):
        return self.block(3)

    @property
    def s5(self):
        return self.block(4)

    @property
    def s6(self):
        return self.block(5)

    def gating_matrix(self):
        return linalg.mat_square(self.s2)

    def _slice(self, block, k, q, width):
        idx = k * self.dims.n_targets + q
        return block[idx * width : (idx + 1) * width]

    def s4_slice(self, k, q):
        return self._slice(self.s4, k, q, self.dims.mean_feature_len)

    def s5_matrix(self, k, q):
        ell = self.dims.mean_feature_len
        return linalg.mat_square(self._slice(self.s5, k, q, ell * ell))

    def s3_entry(self, k, q):
        return self.s3[k * self.dims.n_targets + q]

    def s6_entry(self, k, q):
        return self.s6[k * self.dims.n_targets + q]


def solve_params(s, dims, sigma_floor=SIGMA_FLOOR):
    """Closed-form minimizer of the accumulated surrogate.

    omega solves the gating quadratic, each expert row solves its weighted
    least-squares system, and the variances are the resulting normalized
    residual moments.  Variances below ``sigma_floor`` raise instead of being
    clamped: silent clamping would mask a diverging trajectory.
    """
    view = GaussianSuffStats(s, dims)
    k_n, q_n = dims.n_experts, dims.n_targets

    if dims.gating_len > 0:
        s2m = linalg.sym(view.gating_matrix())
        omega = linalg.solve_psd(2.0 * s2m, -view.s1, name="s2")
    else:
        omega = np.zeros(0)

    upsilon = np.zeros((k_n, q_n, dims.mean_feature_len))
    sigma2 = np.zeros((k_n, q_n))
    for k in range(k_n):
        for q in range(q_n):
            s5m = linalg.sym(view.s5_matrix(k, q))
            s4v = view.s4_slice(k, q)
            u = linalg.solve_psd(2.0 * s5m, -s4v, name=f"s5[{k},{q}]")
            s6v = view.s6_entry(k, q)
            if s6v <= 0:
                raise SolverError("nonpositive weight statistic", block=f"s6[{k},{q}]")
            numerator = view.s3_entry(k, q) + s4v @ u + u @ s5m @ u
            var = numerator / s6v
            if var < sigma_floor:
                raise NumericError(
                    f"variance collapsed below {sigma_floor} for expert {k}, target {q}"
                )
            upsilon[k, q] = u
            sigma2[k, q] = var
    return GaussianParams(dims, omega, upsilon, sigma2)


def nll_gradient(theta, sample):
    """Analytic gradient of ``nll`` in the (omega, upsilon, log sigma2) space.

    The log-variance parameterization keeps the positivity constraint out of
    the way for the gradient-descent baselines.
    """
    x, y = sample
    d = theta.dims
    tau = responsibilities(theta, sample)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    r = mean_features(x, d.mean_degree)
    mu = theta.upsilon @ r
    resid = y[None, :] - mu

    if d.n_experts > 1:
        x_hat = gating_features(x, d.gating_degree)
        g_hat = gating_probs(theta.omega, x, d)[:-1]
        grad_omega = linalg.kron(g_hat - tau[:-1], x_hat)
    else:
        grad_omega = np.zeros(0)
    grad_upsilon = -(tau[:, None, None] * resid[:, :, None] / theta.sigma2[:, :, None]) * r
    grad_logsig = -tau[:, None] * (resid**2 / (2.0 * theta.sigma2) - 0.5)
    return np.concatenate([grad_omega, grad_upsilon.reshape(-1), grad_logsig.reshape(-1)])


def pack_optimizer_vector(theta):
    """Flatten to the unconstrained (omega, upsilon, log sigma2) space."""
    return np.concatenate(
        [theta.omega, theta.upsilon.reshape(-1), np.log(theta.sigma2).reshape(-1)]
    )


def unpack_optimizer_vector(dims, v):
    v = np.asarray(v, dtype=float)
    g = dims.gating_len
    nu = dims.n_experts * dims.n_targets * dims.mean_feature_len
    omega = v[:g]
    upsilon = v[g : g + nu].reshape(dims.n_experts, dims.n_targets, dims.mean_feature_len)
    sigma2 = np.exp(v[g + nu :].reshape(dims.n_experts, dims.n_targets))
    return GaussianParams(dims, omega, upsilon, sigma2)


class GaussianObjective:
    """Flat-vector view of the per-sample loss for the baseline optimizers."""

    def __init__(self, dims):
        self.dims = dims

    def pack(self, theta):
        return pack_optimizer_vector(theta)

    def unpack(self, v):
        return unpack_optimizer_vector(self.dims, v)

    def loss(self, v, sample):
        return nll(self.unpack(v), sample)

    def grad(self, v, sample):
        return nll_gradient(self.unpack(v), sample)

    def report_vector(self, v):
        return self.unpack(v).to_vector()


# ---------------------------------------------------------------------------
# surrogate family binding
# ---------------------------------------------------------------------------


class GaussianFamily(SurrogateFamily):
    """Exponential-family surrogate contract for the Gaussian model."""

    def __init__(self, dims, epsilon_star=1e-6):
        if epsilon_star <= 0:
            raise ValueError("epsilon_star must be positive")
        self.dims = dims
        self.epsilon_star = float(epsilon_star)

    @property
    def stat_len(self):
        return self.dims.stat_len

    def psi(self, theta):
        return 0.0

    def phi(self, theta):
        """Natural-parameter map paired with the statistic blocks."""
        theta.validate()
        d = theta.dims
        kappa = 1.0 / theta.sigma2
        zeta = theta.upsilon / theta.sigma2[:, :, None]
        ell = d.mean_feature_len
        delta = np.einsum("kqi,kqj->kqij", theta.upsilon, theta.upsilon)
        delta = (delta / theta.sigma2[:, :, None, None]).reshape(-1)
        return np.concatenate(
            [
                theta.omega,
                linalg.vec(np.outer(theta.omega, theta.omega)),
                kappa.reshape(-1),
                zeta.reshape(-1),
                delta,
                np.log(theta.sigma2).reshape(-1),
            ]
        )

    def suff_stat(self, theta, sample):
        return suff_stat(theta, sample, self.epsilon_star)

    def solve(self, s):
        return solve_params(s, self.dims)

    def surrogate_loss(self, theta, sample, anchor):
        return surrogate_loss(theta, sample, anchor, self.epsilon_star)

    def loss(self, theta, sample):
        return nll(theta, sample)

    def loss_batch(self, theta, X, Y):
        return nll_batch(theta, X, Y)

    def contains(self, s):
        view = GaussianSuffStats(s, self.dims)
        if np.any(view.s6 <= 0):
            return False
        if self.dims.gating_len > 0 and not linalg.is_psd(view.gating_matrix()):
            return False
        for k in range(self.dims.n_experts):
            for q in range(self.dims.n_targets):
                if not linalg.is_psd(view.s5_matrix(k, q)):
                    return False
        return True

    def theta_to_vector(self, theta):
        return theta.to_vector()

    def vector_to_theta(self, v):
        return GaussianParams.from_vector(self.dims, v)
