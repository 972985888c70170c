"""Streaming first- and second-order baseline optimizers.

All methods consume the same per-sample analytic gradients that the model
modules expose (finite-difference checked there), so comparisons against the
majorization-minimization runs differ only in the update rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import FitReport, MMState
from .exceptions import NumericError

METHODS = ("sgd", "adam", "adamw", "rmsprop", "sophia")


@dataclass(frozen=True)
class OptimizerConfig:
    method: str
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    rho: float = 1.0
    hessian_update_period: int = 10

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.eps <= 0 or self.rho <= 0 or self.hessian_update_period < 1:
            raise ValueError("eps, rho and hessian_update_period must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")


def default_config(method, learning_rate=None, **overrides):
    """Per-method defaults; rates follow common practice for each family."""
    if learning_rate is None:
        learning_rate = 0.05 if method in ("sgd", "rmsprop") else 0.01
    return OptimizerConfig(method=method, learning_rate=learning_rate, **overrides)


@dataclass
class OptimizerState:
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    h: np.ndarray | None = None


def optimizer_step(state: OptimizerState, theta, grad, config: OptimizerConfig):
    """One canonical update of the configured method; returns (state, theta)."""
    theta = np.asarray(theta, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if grad.shape != theta.shape:
        raise ValueError("gradient and parameter shapes differ")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient", iteration=state.step + 1)

    t = state.step + 1
    m = state.m if state.m is not None else np.zeros_like(theta)
    v = state.v if state.v is not None else np.zeros_like(theta)
    h = state.h if state.h is not None else np.zeros_like(theta)
    lr, b1, b2 = config.learning_rate, config.beta1, config.beta2

    if config.method == "sgd":
        new = theta - lr * grad
    elif config.method == "rmsprop":
        v = b2 * v + (1 - b2) * grad**2
        new = theta - lr * grad / (np.sqrt(v) + config.eps)
    elif config.method in ("adam", "adamw"):
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad**2
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new = theta - lr * m_hat / (np.sqrt(v_hat) + config.eps)
        if config.method == "adamw":
            new = new - lr * config.weight_decay * theta
    elif config.method == "sophia":
        m = b1 * m + (1 - b1) * grad
        if (t - 1) % config.hessian_update_period == 0:
            # Diagonal curvature proxy from squared gradients.
            h = b2 * h + (1 - b2) * grad**2
        ratio = m / np.maximum(h, config.eps)
        new = theta - lr * np.clip(ratio, -config.rho, config.rho)
    else:  # pragma: no cover - guarded by OptimizerConfig
        raise ValueError(config.method)

    return OptimizerState(step=t, m=m, v=v, h=h), new


def run_baseline(objective, theta0, samples, config, callback=None) -> FitReport:
    """Per-sample gradient descent over a stream, recorded like an MM run.

    ``objective`` exposes pack/unpack/loss/grad on a flat vector plus
    ``report_vector`` mapping back to the reporting parameterization, so the
    trajectories are directly comparable with the streaming MM reports.
    """
    vec = objective.pack(theta0)
    state = OptimizerState()
    trace = []
    losses = []
    for sample in samples:
        losses.append(objective.loss(vec, sample))
        grad = objective.grad(vec, sample)
        state, vec = optimizer_step(state, vec, grad, config)
        trace.append(objective.report_vector(vec))
        if callback is not None:
            callback(state.step, vec)
    n = len(trace)
    width = len(objective.report_vector(vec))
    final = MMState(s=np.zeros(0), theta=objective.unpack(vec), iteration=n)
    return FitReport(
        iterations=n,
        theta_trace=np.array(trace) if n else np.zeros((0, width)),
        online_loss=np.asarray(losses, dtype=float),
        final_state=final,
        method=config.method,
    )
