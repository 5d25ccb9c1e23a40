"""First-order parameter updates and the ESS-driven kernel step-size rule."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NonFiniteValueError

__all__ = [
    "OptState",
    "make_opt_state",
    "sgd_step",
    "adam_step",
    "opt_step",
    "clip_global_norm",
    "StepSizeAdapter",
    "adapt_gamma",
]


@dataclass(frozen=True)
class OptState:
    """Optimiser memory: method, constants and moment accumulators."""

    method: str
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    grad_clip_norm: float | None = None
    m: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)
    step_count: int = 0


def make_opt_state(method, learning_rate, n_params, beta1=0.9, beta2=0.999,
                   epsilon=1e-8, grad_clip_norm=None) -> OptState:
    method = method.lower()
    if method not in ("sgd", "adam"):
        raise ValueError(f"unknown optimiser {method!r}")
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    return OptState(
        method=method, learning_rate=learning_rate, beta1=beta1, beta2=beta2,
        epsilon=epsilon, grad_clip_norm=grad_clip_norm,
        m=np.zeros(n_params), v=np.zeros(n_params), step_count=0,
    )


def clip_global_norm(g: np.ndarray, max_norm: float | None) -> np.ndarray:
    """Rescale ``g`` so its Euclidean norm does not exceed ``max_norm``."""
    if max_norm is None:
        return g
    norm = float(np.linalg.norm(g))
    if norm > max_norm:
        return g * (max_norm / norm)
    return g


def _checked(g) -> np.ndarray:
    g = np.atleast_1d(np.asarray(g, dtype=float))
    if not np.all(np.isfinite(g)):
        raise NonFiniteValueError("optimiser received a non-finite gradient")
    return g


def sgd_step(state: OptState, theta, g):
    """Plain descent ``theta - lr * g`` after the optional global-norm clip."""
    g = clip_global_norm(_checked(g), state.grad_clip_norm)
    new_theta = np.asarray(theta, dtype=float) - state.learning_rate * g
    return replace(state, step_count=state.step_count + 1), new_theta


def adam_step(state: OptState, theta, g):
    """Bias-corrected moment update; step ``lr * mhat / (sqrt(vhat) + eps)``."""
    g = clip_global_norm(_checked(g), state.grad_clip_norm)
    t = state.step_count + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_theta = np.asarray(theta, dtype=float) - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return replace(state, m=m, v=v, step_count=t), new_theta


def opt_step(state: OptState, theta, g):
    if state.method == "adam":
        return adam_step(state, theta, g)
    return sgd_step(state, theta, g)


@dataclass(frozen=True)
class StepSizeAdapter:
    """Multiplicative kernel step-size control keyed to the observed ESS.

    Grow gamma by ``factor`` while the population stays healthier than
    ``tau_adapt * N``, shrink it by the same factor when it drops below, and
    leave it untouched exactly at the threshold.
    """

    gamma: float
    factor: float = 1.1
    tau_adapt: float = 0.95

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.factor <= 1.0:
            raise ValueError("factor must exceed 1")
        if not 0.0 < self.tau_adapt < 1.0:
            raise ValueError("tau_adapt must lie in (0, 1)")


def adapt_gamma(adapter: StepSizeAdapter, ess_value: float, n_particles: int) -> StepSizeAdapter:
    threshold = adapter.tau_adapt * n_particles
    if ess_value > threshold:
        return replace(adapter, gamma=adapter.gamma * adapter.factor)
    if ess_value < threshold:
        return replace(adapter, gamma=adapter.gamma / adapter.factor)
    return adapter
