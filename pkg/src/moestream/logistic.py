"""Softmax-gated multinomial-logistic mixture-of-experts for discrete targets.

Gating follows the Gaussian module exactly.  Each expert is a constrained
multinomial logistic classifier whose last class is pinned to zero, so the
free coefficient vector of expert k has length (M-1) * P * (Dv+1), laid out
class-major with the polynomial feature vector r (degree-major) inside each
class block.  Both the gating and the expert log-partitions are majorized by
fixed quadratics built from the corrected curvature bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, xlogy

from . import linalg
from .engine import SurrogateFamily
from .exceptions import ShapeError, SolverError
from .gaussian import gating_features, gating_features_batch, mean_features, mean_features_batch


@dataclass(frozen=True)
class LogisticDims:
    """Shape bundle: experts K, covariates P, classes M, polynomial degrees."""

    n_experts: int
    n_covariates: int
    n_classes: int
    gating_degree: int
    expert_degree: int

    def __post_init__(self):
        if min(self.n_experts, self.n_covariates) < 1:
            raise ValueError("dimensions must be positive")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if min(self.gating_degree, self.expert_degree) < 0:
            raise ValueError("degrees must be nonnegative")

    @property
    def gating_feature_len(self):
        return self.n_covariates * (self.gating_degree + 1)

    @property
    def gating_len(self):
        return (self.n_experts - 1) * self.gating_feature_len

    @property
    def expert_feature_len(self):
        return self.n_covariates * (self.expert_degree + 1)

    @property
    def per_expert_len(self):
        # One block per free class; the reference class stays pinned at zero.
        return (self.n_classes - 1) * self.expert_feature_len

    @property
    def block_lengths(self):
        g, iota = self.gating_len, self.per_expert_len
        k = self.n_experts
        return (g, g * g, k * iota, k * iota * iota)

    @property
    def block_offsets(self):
        return np.concatenate([[0], np.cumsum(self.block_lengths)])

    @property
    def stat_len(self):
        return int(sum(self.block_lengths))


@dataclass
class LogisticParams:
    """Parameter point (omega, upsilon) with upsilon[k] the expert-k block."""

    dims: LogisticDims
    omega: np.ndarray
    upsilon: np.ndarray

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float).reshape(-1)
        self.upsilon = np.asarray(self.upsilon, dtype=float)
        d = self.dims
        if self.omega.size != d.gating_len:
            raise ShapeError(f"omega length {self.omega.size}, expected {d.gating_len}")
        if self.upsilon.shape != (d.n_experts, d.per_expert_len):
            raise ShapeError(
                f"upsilon shape {self.upsilon.shape}, expected "
                f"{(d.n_experts, d.per_expert_len)}"
            )

    def copy(self):
        return LogisticParams(self.dims, self.omega.copy(), self.upsilon.copy())

    def to_vector(self):
        return np.concatenate([self.omega, self.upsilon.reshape(-1)])

    @classmethod
    def from_vector(cls, dims, v):
        v = np.asarray(v, dtype=float)
        g = dims.gating_len
        return cls(dims, v[:g], v[g:].reshape(dims.n_experts, dims.per_expert_len))

    def to_json_dict(self):
        d = self.dims
        return {
            "dims": {
                "K": d.n_experts,
                "M": d.n_classes,
                "P": d.n_covariates,
                "D_W": d.gating_degree,
                "D_V": d.expert_degree,
            },
            "omega": self.omega.tolist(),
            "upsilon": self.upsilon.tolist(),
        }

    @classmethod
    def from_json_dict(cls, payload):
        h = payload["dims"]
        dims = LogisticDims(h["K"], h["P"], h["M"], h["D_W"], h["D_V"])
        return cls(
            dims,
            np.asarray(payload["omega"], dtype=float),
            np.asarray(payload["upsilon"], dtype=float),
        )


# ---------------------------------------------------------------------------
# model evaluation
# ---------------------------------------------------------------------------


def _check_class(y, n_classes):
    y = int(y)
    if not 1 <= y <= n_classes:
        raise ValueError(f"class label {y} outside 1..{n_classes}")
    return y


def _lse_rows(z):
    """Row-wise log-sum-exp without scipy call overhead (tiny arrays)."""
    m = z.max(axis=-1, keepdims=True)
    return m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def _class_scores(c_k, r, dims):
    return c_k.reshape(dims.n_classes - 1, dims.expert_feature_len) @ r


def _all_expert_log_probs(theta, r):
    """Log class probabilities of every expert at once, shape (K, M)."""
    d = theta.dims
    scores = theta.upsilon.reshape(d.n_experts, d.n_classes - 1, d.expert_feature_len) @ r
    z = np.concatenate([scores, np.zeros((d.n_experts, 1))], axis=1)
    return z - _lse_rows(z)


def log_expert_probs(c_k, x, dims):
    r = mean_features(x, dims.expert_degree)
    z = np.concatenate([_class_scores(c_k, r, dims), [0.0]])
    return z - _lse_rows(z)


def expert_probs(c_k, x, dims):
    """Class probabilities of one expert; class M is the pinned reference."""
    return np.exp(log_expert_probs(c_k, x, dims))


def log_gating_probs(omega, x, dims):
    if dims.n_experts == 1:
        return np.zeros(1)
    x_hat = gating_features(x, dims.gating_degree)
    w = omega.reshape(dims.n_experts - 1, dims.gating_feature_len) @ x_hat
    z = np.concatenate([w, [0.0]])
    return z - _lse_rows(z)


def gating_probs(omega, x, dims):
    return np.exp(log_gating_probs(omega, x, dims))


def _log_joint(theta, sample):
    x, y = sample
    d = theta.dims
    y = _check_class(y, d.n_classes)
    lg = log_gating_probs(theta.omega, x, d)
    r = mean_features(x, d.expert_degree)
    le = _all_expert_log_probs(theta, r)[:, y - 1]
    return lg + le


def nll_discrete(theta, sample):
    """Negative log predictive probability of the observed class."""
    return float(-_lse_rows(_log_joint(theta, sample))[0])


def responsibilities_discrete(theta, sample):
    lj = _log_joint(theta, sample)
    return np.exp(lj - _lse_rows(lj))


def predictive_probs(theta, x):
    """Marginal class probabilities: gate-weighted expert probabilities."""
    d = theta.dims
    g = gating_probs(theta.omega, x, d)
    probs = np.stack([expert_probs(theta.upsilon[k], x, d) for k in range(d.n_experts)])
    return g @ probs


def nll_discrete_batch(theta, X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    d = theta.dims
    xg = gating_features_batch(X, d.gating_degree)
    if d.n_experts > 1:
        w = xg @ theta.omega.reshape(d.n_experts - 1, -1).T
        z = np.concatenate([w, np.zeros((len(X), 1))], axis=1)
    else:
        z = np.zeros((len(X), 1))
    lg = z - logsumexp(z, axis=1, keepdims=True)
    xr = mean_features_batch(X, d.expert_degree)
    scores = np.einsum(
        "kml,nl->nkm",
        theta.upsilon.reshape(d.n_experts, d.n_classes - 1, d.expert_feature_len),
        xr,
    )
    scores = np.concatenate([scores, np.zeros((len(X), d.n_experts, 1))], axis=2)
    log_probs = scores - logsumexp(scores, axis=2, keepdims=True)
    le = np.take_along_axis(log_probs, (y - 1)[:, None, None] * np.ones((1, d.n_experts, 1), dtype=int), axis=2)[:, :, 0]
    return -logsumexp(lg + le, axis=1)


def predictive_probs_batch(theta, X):
    """Marginal class probabilities for each row of X, shape (n, M)."""
    X = np.asarray(X, dtype=float)
    d = theta.dims
    xg = gating_features_batch(X, d.gating_degree)
    if d.n_experts > 1:
        w = xg @ theta.omega.reshape(d.n_experts - 1, -1).T
        z = np.concatenate([w, np.zeros((len(X), 1))], axis=1)
    else:
        z = np.zeros((len(X), 1))
    g = np.exp(z - logsumexp(z, axis=1, keepdims=True))
    xr = mean_features_batch(X, d.expert_degree)
    scores = np.einsum(
        "kml,nl->nkm",
        theta.upsilon.reshape(d.n_experts, d.n_classes - 1, d.expert_feature_len),
        xr,
    )
    scores = np.concatenate([scores, np.zeros((len(X), d.n_experts, 1))], axis=2)
    probs = np.exp(scores - logsumexp(scores, axis=2, keepdims=True))
    return np.einsum("nk,nkm->nm", g, probs)


def _one_hot_free(y, n_classes):
    """Indicator over the free classes; all-zero when y is the reference."""
    v = np.zeros(n_classes - 1)
    if y < n_classes:
        v[y - 1] = 1.0
    return v


# ---------------------------------------------------------------------------
# surrogate, sufficient statistic, solve
# ---------------------------------------------------------------------------


def surrogate_loss_discrete(theta, sample, anchor, epsilon_star=1e-6):
    """Majorizer of ``nll_discrete`` anchored at ``anchor``.

    Both the gating and each expert log-partition are replaced by tangent
    quadratics whose curvature matrices dominate the exact Hessians.
    """
    x, y = sample
    d = theta.dims
    y = _check_class(y, d.n_classes)
    tau = responsibilities_discrete(anchor, sample)
    entropy = float(np.sum(xlogy(tau, tau)))
    r = mean_features(x, d.expert_degree)
    bound_m = linalg.build_B(
        linalg.CurvatureBoundSpec(d.n_classes - 1, r, epsilon_star)
    )
    onehot = _one_hot_free(y, d.n_classes)

    log_probs = _all_expert_log_probs(anchor, r)
    log_partitions = -log_probs[:, -1]  # log(1 + sum exp(scores)) per expert
    e_hat = np.exp(log_probs[:, :-1])
    grads = (e_hat[:, :, None] * r[None, None, :]).reshape(d.n_experts, -1)
    diffs = theta.upsilon - anchor.upsilon
    quad = np.einsum("ki,ij,kj->k", diffs, bound_m, diffs)
    picked = theta.upsilon @ linalg.kron(onehot, r)
    expert_term = float(
        tau @ (log_partitions + np.einsum("ki,ki->k", diffs, grads) + 0.5 * quad - picked)
    )

    if d.n_experts == 1:
        return entropy + expert_term

    x_hat = gating_features(x, d.gating_degree)
    g_hat = gating_probs(anchor.omega, x, d)[:-1]
    grad_g = linalg.kron(g_hat, x_hat)
    w_anchor = anchor.omega.reshape(d.n_experts - 1, -1) @ x_hat
    log_partition_g = float(_lse_rows(np.concatenate([[0.0], w_anchor]))[0])
    bound_k = linalg.build_B(
        linalg.CurvatureBoundSpec(d.n_experts - 1, x_hat, epsilon_star)
    )
    diff = theta.omega - anchor.omega
    xi = linalg.kron(tau[:-1], x_hat)
    gating_term = (
        log_partition_g
        + float(diff @ grad_g)
        + 0.5 * float(diff @ bound_k @ diff)
        - float(theta.omega @ xi)
    )
    return entropy + gating_term + expert_term


def suff_stat_discrete(anchor, sample, epsilon_star=1e-6):
    """Per-sample statistic: gating blocks plus per-expert logistic blocks.

    The fourth block stacks tau_k-scaled copies of the expert curvature bound
    so that the block-diagonal reconstruction decouples the experts in the
    solve.
    """
    x, y = sample
    d = anchor.dims
    y = _check_class(y, d.n_classes)
    tau = responsibilities_discrete(anchor, sample)
    r = mean_features(x, d.expert_degree)
    bound_m = linalg.build_B(
        linalg.CurvatureBoundSpec(d.n_classes - 1, r, epsilon_star)
    )
    onehot = _one_hot_free(y, d.n_classes)

    blocks = []
    if d.n_experts > 1:
        x_hat = gating_features(x, d.gating_degree)
        g_hat = gating_probs(anchor.omega, x, d)[:-1]
        bound_k = linalg.build_B(
            linalg.CurvatureBoundSpec(d.n_experts - 1, x_hat, epsilon_star)
        )
        blocks.append(linalg.kron(g_hat - tau[:-1], x_hat) - bound_k @ anchor.omega)
        blocks.append(linalg.vec(bound_k) / 2.0)
    else:
        blocks.append(np.zeros(0))
        blocks.append(np.zeros(0))

    e_hat = np.exp(_all_expert_log_probs(anchor, r)[:, :-1])
    centered = ((e_hat - onehot[None, :])[:, :, None] * r[None, None, :]).reshape(
        d.n_experts, -1
    )
    s3 = tau[:, None] * (centered - anchor.upsilon @ bound_m)
    blocks.append(s3.reshape(-1))
    stacked = (tau[:, None, None] * bound_m[None]).reshape(-1, bound_m.shape[1])
    blocks.append(linalg.vec(stacked) / 2.0)
    return np.concatenate(blocks)


class LogisticSuffStats:
    """Named views into the flat statistic vector."""

    def __init__(self, data, dims):
        data = np.asarray(data, dtype=float)
        if data.size != dims.stat_len:
            raise ShapeError(f"statistic length {data.size}, expected {dims.stat_len}")
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

    def gating_matrix(self):
        return linalg.mat_square(self.s2)

    def stacked_curvature(self):
        iota = self.dims.per_expert_len
        return linalg.mat(self.s4, self.dims.n_experts * iota, iota)

    def expert_matrix(self, k):
        iota = self.dims.per_expert_len
        return self.stacked_curvature()[k * iota : (k + 1) * iota]

    def s3_slice(self, k):
        iota = self.dims.per_expert_len
        return self.s3[k * iota : (k + 1) * iota]


def solve_params_discrete(s, dims):
    """Closed-form minimizer: gating quadratic plus per-expert quadratics."""
    view = LogisticSuffStats(s, dims)
    if dims.gating_len > 0:
        s2m = view.gating_matrix()
        omega = linalg.solve_psd(s2m + s2m.T, -view.s1, name="s2")
    else:
        omega = np.zeros(0)
    upsilon = np.zeros((dims.n_experts, dims.per_expert_len))
    for k in range(dims.n_experts):
        block = view.expert_matrix(k)
        try:
            upsilon[k] = linalg.solve_psd(block + block.T, -view.s3_slice(k), name=f"s4[{k}]")
        except SolverError as err:
            raise SolverError("expert curvature block is singular", block=f"expert {k}") from err
    return LogisticParams(dims, omega, upsilon)


def nll_discrete_gradient(theta, sample):
    """Analytic gradient of ``nll_discrete`` over (omega, upsilon)."""
    x, y = sample
    d = theta.dims
    y = _check_class(y, d.n_classes)
    tau = responsibilities_discrete(theta, sample)
    r = mean_features(x, d.expert_degree)
    onehot = _one_hot_free(y, d.n_classes)
    if d.n_experts > 1:
        x_hat = gating_features(x, d.gating_degree)
        g_hat = gating_probs(theta.omega, x, d)[:-1]
        grad_omega = linalg.kron(g_hat - tau[:-1], x_hat)
    else:
        grad_omega = np.zeros(0)
    e_hat = np.exp(_all_expert_log_probs(theta, r)[:, :-1])
    grad_ups = tau[:, None] * ((e_hat - onehot[None, :])[:, :, None] * r[None, None, :]).reshape(
        d.n_experts, -1
    )
    return np.concatenate([grad_omega, grad_ups.reshape(-1)])


class LogisticObjective:
    """Flat-vector view of the per-sample loss for the baseline optimizers."""

    def __init__(self, dims):
        self.dims = dims

    def pack(self, theta):
        return theta.to_vector()

    def unpack(self, v):
        return LogisticParams.from_vector(self.dims, v)

    def loss(self, v, sample):
        return nll_discrete(self.unpack(v), sample)

    def grad(self, v, sample):
        return nll_discrete_gradient(self.unpack(v), sample)

    def report_vector(self, v):
        return np.asarray(v, dtype=float).copy()


class LogisticFamily(SurrogateFamily):
    """Exponential-family surrogate contract for the logistic model."""

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
        omega = theta.omega
        stacked = np.vstack(
            [np.outer(theta.upsilon[k], theta.upsilon[k]) for k in range(self.dims.n_experts)]
        )
        return np.concatenate(
            [
                omega,
                linalg.vec(np.outer(omega, omega)),
                theta.upsilon.reshape(-1),
                linalg.vec(stacked),
            ]
        )

    def suff_stat(self, theta, sample):
        return suff_stat_discrete(theta, sample, self.epsilon_star)

    def solve(self, s):
        return solve_params_discrete(s, self.dims)

    def surrogate_loss(self, theta, sample, anchor):
        return surrogate_loss_discrete(theta, sample, anchor, self.epsilon_star)

    def loss(self, theta, sample):
        return nll_discrete(theta, sample)

    def loss_batch(self, theta, X, Y):
        return nll_discrete_batch(theta, X, Y)

    def contains(self, s):
        view = LogisticSuffStats(s, self.dims)
        if self.dims.gating_len > 0 and not linalg.is_psd(view.gating_matrix()):
            return False
        for k in range(self.dims.n_experts):
            if not linalg.is_psd(view.expert_matrix(k)):
                return False
        return True

    def theta_to_vector(self, theta):
        return theta.to_vector()

    def vector_to_theta(self, v):
        return LogisticParams.from_vector(self.dims, v)
