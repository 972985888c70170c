"""Generic incremental stochastic majorization-minimization engine.

The engine maintains a statistic vector s and repeats two moves per incoming
sample: a stochastic-approximation blend of s toward the sample's sufficient
statistic, and a deterministic solve mapping s back to model parameters.  The
model enters only through the :class:`SurrogateFamily` contract.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np

from .exceptions import InvariantViolation, NumericError

__all__ = [
    "SurrogateFamily",
    "StepSchedule",
    "MMState",
    "FitReport",
    "mm_step",
    "run_stream",
    "stationarity_residual",
]


class SurrogateFamily(abc.ABC):
    """Exponential-family surrogate contract.

    A family supplies the split g(theta, z; anchor) = -psi(theta) +
    <suff_stat(anchor, z), phi(theta)> together with the minimizer
    ``solve(s)`` of theta -> -psi(theta) + <s, phi(theta)>.  Tangency and
    majorization of ``surrogate_loss`` against ``loss`` are the contract's
    testable guarantees.
    """

    @abc.abstractmethod
    def psi(self, theta) -> float:
        ...

    @abc.abstractmethod
    def phi(self, theta) -> np.ndarray:
        ...

    @abc.abstractmethod
    def suff_stat(self, theta, sample) -> np.ndarray:
        ...

    @abc.abstractmethod
    def solve(self, s):
        """Unique minimizer of theta -> -psi(theta) + <s, phi(theta)>."""

    @abc.abstractmethod
    def surrogate_loss(self, theta, sample, anchor) -> float:
        ...

    @abc.abstractmethod
    def loss(self, theta, sample) -> float:
        """Model loss f(theta; z) that the surrogate majorizes."""

    @abc.abstractmethod
    def contains(self, s) -> bool:
        """Membership predicate of the admissible convex statistic set."""

    @abc.abstractmethod
    def theta_to_vector(self, theta) -> np.ndarray:
        """Flatten parameters for trajectory recording and averaging."""

    @abc.abstractmethod
    def vector_to_theta(self, v):
        ...

    def loss_batch(self, theta, X, Y) -> np.ndarray:
        """Per-sample losses over a dataset; overridable for vectorization."""
        return np.array([self.loss(theta, (x, y)) for x, y in zip(X, Y)])

    def surrogate_value(self, theta, sample, anchor) -> float:
        """Surrogate evaluated through the exponential-family split."""
        s = self.suff_stat(anchor, sample)
        return -self.psi(theta) + float(s @ self.phi(theta))


@dataclass(frozen=True)
class StepSchedule:
    """Diminishing step sizes gamma_n = gamma0 * n^(-alpha).

    gamma0 in (0,1) and alpha in (1/2, 1] keep every step inside (0,1) while
    the step sums diverge and the squared sums converge.
    """

    gamma0: float = 0.9
    alpha: float = 0.6

    def __post_init__(self):
        if not 0.0 < self.gamma0 < 1.0:
            raise ValueError("gamma0 must lie in (0, 1)")
        if not 0.5 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (1/2, 1]")

    def gamma(self, n: int) -> float:
        if n < 1:
            raise ValueError("step index must be >= 1")
        return self.gamma0 * float(n) ** (-self.alpha)


@dataclass
class MMState:
    """Current statistic s, the solved parameters, and the step counter."""

    s: np.ndarray
    theta: object
    iteration: int = 0


@dataclass
class FitReport:
    """Raw trajectory of one streaming run.

    ``theta_trace[i]`` is the flattened parameter vector after processing
    sample i+1 and ``online_loss[i]`` the loss of the pre-update parameters
    on that sample (prequential convention).  Averaged views and dataset
    metrics are post-hoc layers, not engine state.
    """

    iterations: int
    theta_trace: np.ndarray
    online_loss: np.ndarray
    final_state: MMState
    method: str = "mm"


def _check_sample_finite(sample, iteration):
    for part in sample:
        arr = np.asarray(part, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise NumericError("non-finite sample", iteration=iteration)


def mm_step(state: MMState, sample, schedule, family: SurrogateFamily) -> MMState:
    """One stochastic-approximation update followed by the parameter solve.

    s' = s + gamma_(n+1) (S(theta, z) - s) stays in the admissible set as a
    convex combination; leaving it is reported loudly rather than projected
    away.
    """
    n_next = state.iteration + 1
    _check_sample_finite(sample, n_next)
    gamma = schedule.gamma(n_next)
    sbar = family.suff_stat(state.theta, sample)
    s_new = state.s + gamma * (sbar - state.s)
    if not np.all(np.isfinite(s_new)):
        raise NumericError("non-finite statistic update", iteration=n_next)
    if not family.contains(s_new):
        raise InvariantViolation(
            f"statistic left the admissible set at iteration {n_next}"
        )
    theta_new = family.solve(s_new)
    return MMState(s=s_new, theta=theta_new, iteration=n_next)


def run_stream(initial: MMState, samples, schedule, family, callback=None) -> FitReport:
    """Apply :func:`mm_step` over a sample stream in order.

    The callback, when given, receives (iteration, theta, s) after each step.
    An empty stream returns a zero-iteration report around the initial state.
    """
    state = initial
    trace = []
    losses = []
    for sample in samples:
        losses.append(family.loss(state.theta, sample))
        state = mm_step(state, sample, schedule, family)
        trace.append(family.theta_to_vector(state.theta))
        if callback is not None:
            callback(state.iteration, state.theta, state.s)
    n = len(trace)
    width = len(family.theta_to_vector(initial.theta))
    theta_trace = np.array(trace) if n else np.zeros((0, width))
    return FitReport(
        iterations=n,
        theta_trace=theta_trace,
        online_loss=np.asarray(losses, dtype=float),
        final_state=state,
    )


def stationarity_residual(state: MMState, holdout, family) -> float:
    """Empirical fixed-point gap ||mean_z S(theta(s), z) - s||_inf.

    A small value certifies an approximate fixed point of the statistic
    recursion, which corresponds to an approximate stationary point of the
    population objective.
    """
    total = None
    count = 0
    for sample in holdout:
        sbar = family.suff_stat(state.theta, sample)
        total = sbar if total is None else total + sbar
        count += 1
    if count == 0:
        raise ValueError("holdout must be non-empty")
    return float(np.max(np.abs(total / count - state.s)))
