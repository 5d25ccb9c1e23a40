"""Overdamped Langevin forward kernel, its reversal, and the incremental weight.

The forward move is ``x' = x - gamma * grad U_prev(x) + sqrt(2 gamma) * sigma * xi``
with standard-normal ``xi``; the backward kernel is the same move run from
``x'`` under the updated potential.  The per-step importance weight is the
ratio of the unnormalised target change to the forward/backward transition
densities.  It is computed in the log domain only, either through the compact
single-point summary

    alpha(x -> x') = U(x) + (x' - x) . grad U(x) / (2 sigma^2)
                          + gamma * |grad U(x)|^2 / (4 sigma^2)

or directly as the Gaussian log-density ratio with variance
``2 gamma sigma^2``; the two agree identically and the direct form exists for
cross-validation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, WeightOverflowError

__all__ = [
    "UlaKernel",
    "ula_step",
    "alpha",
    "alpha_values",
    "incremental_log_weight",
    "incremental_log_weight_direct",
]


@dataclass(frozen=True)
class UlaKernel:
    """Step size and noise scale of the Langevin move."""

    gamma: float
    sigma_noise: float = 1.0

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.sigma_noise <= 0:
            raise ValueError("sigma_noise must be positive")

    def with_gamma(self, gamma: float) -> "UlaKernel":
        return UlaKernel(gamma=gamma, sigma_noise=self.sigma_noise)


def ula_step(x, grad_x_u, kernel: UlaKernel, noise):
    """One Langevin move ``x - gamma * grad + sqrt(2 gamma) * sigma * noise``.

    Works on single states ``(d,)`` or batches ``(N, d)``.

    Raises
    ------
    DivergenceError
        If the supplied gradient is non-finite (first offending row attached).
    """
    x = np.asarray(x, dtype=float)
    grad_x_u = np.asarray(grad_x_u, dtype=float)
    if not np.all(np.isfinite(grad_x_u)):
        bad = ~np.all(np.isfinite(np.atleast_2d(grad_x_u)), axis=1)
        idx = int(np.flatnonzero(bad)[0])
        raise DivergenceError(f"non-finite potential gradient at particle {idx}", index=idx)
    scale = np.sqrt(2.0 * kernel.gamma) * kernel.sigma_noise
    return x - kernel.gamma * grad_x_u + scale * np.asarray(noise, dtype=float)


def alpha_values(u, grad_u, x, x_prime, gamma, sigma_noise=1.0):
    """Compact weight summary from precomputed potential/gradient at ``x``.

    Lets callers share gradient evaluations between propagation and
    weighting; :func:`alpha` is the convenience wrapper that evaluates the
    model itself.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    x_prime = np.atleast_2d(np.asarray(x_prime, dtype=float))
    grad_u = np.atleast_2d(np.asarray(grad_u, dtype=float))
    inv_two_sq = 1.0 / (2.0 * sigma_noise**2)
    cross = np.sum((x_prime - x) * grad_u, axis=1)
    sq = np.sum(grad_u * grad_u, axis=1)
    return np.asarray(u, dtype=float) + inv_two_sq * cross + 0.5 * gamma * inv_two_sq * sq


def alpha(model, x, x_prime, gamma, sigma_noise=1.0):
    """``U(x) + (x'-x).grad U(x)/(2 sigma^2) + gamma |grad U(x)|^2/(4 sigma^2)``."""
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    values = alpha_values(
        model.potential_batch(x2), model.grad_x_batch(x2), x2, x_prime, gamma, sigma_noise
    )
    return values if np.asarray(x).ndim > 1 else float(values[0])


def incremental_log_weight(model_prev, model_curr, x_prev, x_curr, kernel: UlaKernel):
    """Per-particle log-increment of the importance weight across one move.

    ``-alpha_curr(x_curr -> x_prev) + alpha_prev(x_prev -> x_curr)`` with the
    models at the previous and updated parameters.

    Raises
    ------
    WeightOverflowError
        If any intermediate evaluates non-finite.
    """
    x_prev2 = np.atleast_2d(np.asarray(x_prev, dtype=float))
    x_curr2 = np.atleast_2d(np.asarray(x_curr, dtype=float))
    a_prev = alpha_values(
        model_prev.potential_batch(x_prev2), model_prev.grad_x_batch(x_prev2),
        x_prev2, x_curr2, kernel.gamma, kernel.sigma_noise,
    )
    a_curr = alpha_values(
        model_curr.potential_batch(x_curr2), model_curr.grad_x_batch(x_curr2),
        x_curr2, x_prev2, kernel.gamma, kernel.sigma_noise,
    )
    log_g = a_prev - a_curr
    if not np.all(np.isfinite(log_g)):
        raise WeightOverflowError("incremental log-weight is non-finite")
    return log_g if np.asarray(x_prev).ndim > 1 else float(log_g[0])


def incremental_log_weight_direct(model_prev, model_curr, x_prev, x_curr, kernel: UlaKernel):
    """Same quantity as the Gaussian transition-density log ratio.

    Uses variance ``2 gamma sigma^2`` in both the forward and backward
    densities; the shared normalising constants cancel.  Kept as an
    independent cross-check of :func:`incremental_log_weight`.
    """
    x_prev2 = np.atleast_2d(np.asarray(x_prev, dtype=float))
    x_curr2 = np.atleast_2d(np.asarray(x_curr, dtype=float))
    gamma, sigma = kernel.gamma, kernel.sigma_noise
    inv_var = 1.0 / (4.0 * gamma * sigma**2)

    u_prev = model_prev.potential_batch(x_prev2)
    u_curr = model_curr.potential_batch(x_curr2)
    forward_residual = x_curr2 - x_prev2 + gamma * model_prev.grad_x_batch(x_prev2)
    backward_residual = x_prev2 - x_curr2 + gamma * model_curr.grad_x_batch(x_curr2)

    log_g = (
        u_prev - u_curr
        - inv_var * np.sum(backward_residual**2, axis=1)
        + inv_var * np.sum(forward_residual**2, axis=1)
    )
    if not np.all(np.isfinite(log_g)):
        raise WeightOverflowError("incremental log-weight is non-finite")
    return log_g if np.asarray(x_prev).ndim > 1 else float(log_g[0])
