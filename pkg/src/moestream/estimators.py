"""Scikit-learn style estimators over the streaming fitting machinery.

The estimators run one pass over the rows of (X, y) in order: a warm-up
prefix seeds the statistic vector, the remainder drives the stochastic
recursion, and predictions use the Polyak-averaged parameters by default.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.exceptions import NotFittedError

from .engine import MMState, StepSchedule, run_stream
from .evaluation import polyak_path
from .gaussian import (
    GaussianDims,
    GaussianFamily,
    GaussianParams,
    regression_mean_batch,
)
from .initialization import kmeans_init, perturbed_truth_init, warmup_s0
from .logistic import (
    LogisticDims,
    LogisticFamily,
    LogisticParams,
    predictive_probs_batch,
)
from .validation import (
    check_class_targets,
    check_continuous_targets,
    check_covariates,
    check_positive_int,
)


class _StreamingMoEBase(BaseEstimator):
    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("call fit before predict")

    def _require_stream(self, n):
        warmup = check_positive_int(self.warmup, "warmup")
        if n <= warmup and not self.replay_warmup:
            raise ValueError(
                f"need more than warmup={warmup} samples when replay_warmup=False"
            )
        return warmup

    def _run(self, family, theta0, X, y_rows):
        n = len(X)
        warmup = self._require_stream(n)
        w = min(warmup, n)
        s0 = warmup_s0(family, theta0, list(zip(X[:w], y_rows[:w])))
        start = 0 if self.replay_warmup else w
        stream = list(zip(X[start:], y_rows[start:]))
        # Resume the step counter after the warm-up window; see warmup_s0.
        report = run_stream(
            MMState(s=s0, theta=theta0, iteration=w),
            stream,
            StepSchedule(self.gamma0, self.alpha),
            family,
        )
        self.report_ = report
        self.n_iter_ = report.iterations
        self.params_ = report.final_state.theta
        averaged = polyak_path(report.theta_trace, self.polyak_start)
        if report.iterations >= self.polyak_start:
            self.polyak_params_ = family.vector_to_theta(averaged[-1])
        else:
            self.polyak_params_ = self.params_
        return self

    def _predict_params(self):
        self._check_fitted()
        return self.polyak_params_ if self.use_polyak else self.params_


class MixtureOfExpertsRegressor(_StreamingMoEBase, RegressorMixin):
    """Streaming softmax-gated Gaussian mixture-of-experts regressor.

    Parameters
    ----------
    n_experts : number of experts K.
    gating_degree, mean_degree : polynomial degrees of the gating scores and
        expert means.
    gamma0, alpha : step-size schedule gamma0 * n^(-alpha).
    epsilon_star : ridge of the gating curvature bound.
    init : "kmeans" (cluster-then-fit, optionally with a warm-started gate),
        or "perturbed" (requires ``init_params`` as the reference point), or
        "params" (use ``init_params`` verbatim).
    warmup : number of leading samples averaged into the initial statistic.
    replay_warmup : whether those samples are also streamed afterwards.
    polyak_start : first iteration included in the Polyak average.
    use_polyak : predict with averaged parameters instead of the last iterate.
    random_state : seed for k-means restarts and init noise.
    """

    def __init__(
        self,
        n_experts=2,
        gating_degree=1,
        mean_degree=1,
        gamma0=0.9,
        alpha=0.6,
        epsilon_star=1e-6,
        init="kmeans",
        init_params=None,
        noise_scale=0.005,
        kmeans_restarts=10,
        warm_start_gating=False,
        warmup=85,
        replay_warmup=False,
        polyak_start=100,
        use_polyak=True,
        random_state=None,
    ):
        self.n_experts = n_experts
        self.gating_degree = gating_degree
        self.mean_degree = mean_degree
        self.gamma0 = gamma0
        self.alpha = alpha
        self.epsilon_star = epsilon_star
        self.init = init
        self.init_params = init_params
        self.noise_scale = noise_scale
        self.kmeans_restarts = kmeans_restarts
        self.warm_start_gating = warm_start_gating
        self.warmup = warmup
        self.replay_warmup = replay_warmup
        self.polyak_start = polyak_start
        self.use_polyak = use_polyak
        self.random_state = random_state

    def fit(self, X, y):
        X = check_covariates(X)
        y2 = check_continuous_targets(y, len(X))
        self._require_stream(len(X))
        self._y_was_1d = np.asarray(y).ndim == 1
        dims = GaussianDims(
            self.n_experts, X.shape[1], y2.shape[1], self.gating_degree, self.mean_degree
        )
        family = GaussianFamily(dims, self.epsilon_star)
        seed = 0 if self.random_state is None else int(self.random_state)
        if self.init == "kmeans":
            theta0 = kmeans_init(
                X,
                y2,
                dims,
                restarts=self.kmeans_restarts,
                seed=seed,
                warm_start_gating=self.warm_start_gating,
            )
        elif self.init == "perturbed":
            if not isinstance(self.init_params, GaussianParams):
                raise ValueError("perturbed init requires init_params")
            theta0 = perturbed_truth_init(self.init_params, self.noise_scale, seed)
        elif self.init == "params":
            if not isinstance(self.init_params, GaussianParams):
                raise ValueError("params init requires init_params")
            theta0 = self.init_params.copy()
        else:
            raise ValueError(f"unknown init {self.init!r}")
        self.n_features_in_ = X.shape[1]
        return self._run(family, theta0, X, y2)

    def predict(self, X):
        theta = self._predict_params()
        X = check_covariates(X, self.n_features_in_)
        pred = regression_mean_batch(theta, X)
        return pred[:, 0] if self._y_was_1d else pred


class MixtureOfExpertsClassifier(_StreamingMoEBase, ClassifierMixin):
    """Streaming softmax-gated multinomial-logistic mixture-of-experts.

    Class labels may be arbitrary; they are encoded in sorted order and the
    last one becomes the pinned reference class.  ``init`` supports "jitter"
    (zero gate, tiny random expert offsets), "zero" (everything exactly
    zero; with several experts this is a symmetric fixed point of the
    recursion, so the experts can never split) or "params" with explicit
    ``init_params``.
    """

    def __init__(
        self,
        n_experts=2,
        gating_degree=1,
        expert_degree=1,
        gamma0=0.9,
        alpha=0.6,
        epsilon_star=1e-6,
        init="jitter",
        init_jitter=0.1,
        init_params=None,
        warmup=85,
        replay_warmup=False,
        polyak_start=100,
        use_polyak=True,
        random_state=None,
    ):
        self.n_experts = n_experts
        self.gating_degree = gating_degree
        self.expert_degree = expert_degree
        self.gamma0 = gamma0
        self.alpha = alpha
        self.epsilon_star = epsilon_star
        self.init = init
        self.init_jitter = init_jitter
        self.init_params = init_params
        self.warmup = warmup
        self.replay_warmup = replay_warmup
        self.polyak_start = polyak_start
        self.use_polyak = use_polyak
        self.random_state = random_state

    def fit(self, X, y):
        X = check_covariates(X)
        encoded, self.classes_ = check_class_targets(y, len(X))
        self._require_stream(len(X))
        dims = LogisticDims(
            self.n_experts,
            X.shape[1],
            len(self.classes_),
            self.gating_degree,
            self.expert_degree,
        )
        family = LogisticFamily(dims, self.epsilon_star)
        if self.init == "jitter":
            rng = np.random.default_rng(0 if self.random_state is None else int(self.random_state))
            theta0 = LogisticParams(
                dims,
                np.zeros(dims.gating_len),
                self.init_jitter * rng.standard_normal((dims.n_experts, dims.per_expert_len)),
            )
        elif self.init == "zero":
            theta0 = LogisticParams(
                dims, np.zeros(dims.gating_len), np.zeros((dims.n_experts, dims.per_expert_len))
            )
        elif self.init == "params":
            if not isinstance(self.init_params, LogisticParams):
                raise ValueError("params init requires init_params")
            theta0 = self.init_params.copy()
        else:
            raise ValueError(f"unknown init {self.init!r}")
        self.n_features_in_ = X.shape[1]
        return self._run(family, theta0, X, encoded)

    def predict_proba(self, X):
        theta = self._predict_params()
        X = check_covariates(X, self.n_features_in_)
        return predictive_probs_batch(theta, X)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]
