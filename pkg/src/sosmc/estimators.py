"""Gradient estimators over weighted particle populations.

All estimators are self-normalised weighted averages: particles and weights
enter as constants, never as quantities to differentiate through.  The
reward-tuning estimators return the ascent gradient of the tuning objective

    J(theta) = E_{pi_theta}[R] - beta * KL,

with the forward divergence ``KL(pi_ref || pi_theta)`` estimated from an
independent reference batch and the reverse divergence ``KL(pi_theta || pi_0)``
from the particles themselves.  Both reduce to weighted covariances between a
scalar advantage and the per-sample parameter gradient of the potential, so
shifting the reward by a constant changes nothing.

The scalar surrogate pair exists purely as a cross-check: the analytic
parameter gradient of (reward surrogate + divergence surrogate), accumulated
by the models' fused reverse sweep, must equal the negated reverse-divergence
estimate on the same particles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NonFiniteValueError
from .particles import ParticleSystem, ess

__all__ = [
    "GradientEstimate",
    "gradient_generic",
    "gradient_forward_kl",
    "gradient_reverse_kl",
    "gradient_reverse_kl_expanded",
    "surrogate_loss_values",
    "surrogate_total_gradient",
    "soul_estimate",
]


@dataclass(frozen=True)
class GradientEstimate:
    """A gradient estimate plus the diagnostics logged alongside it."""

    g: np.ndarray
    particle_reward: float
    ess: float

    def __post_init__(self):
        object.__setattr__(self, "g", np.atleast_1d(np.asarray(self.g, dtype=float)))
        if not np.all(np.isfinite(self.g)):
            raise NonFiniteValueError("gradient estimate is non-finite")


def _positions(system):
    return system.positions if isinstance(system, ParticleSystem) else np.atleast_2d(system)


def gradient_generic(system, weights, h_theta) -> GradientEstimate:
    """Weighted mean of an arbitrary integrand ``H`` over the particles."""
    x = _positions(system)
    w = np.asarray(weights, dtype=float).ravel()
    values = np.asarray(h_theta(x), dtype=float)
    values = values.reshape(x.shape[0], -1)
    bad = ~np.all(np.isfinite(values), axis=1)
    if np.any(bad):
        idx = int(np.flatnonzero(bad)[0])
        raise NonFiniteValueError(f"H evaluated non-finite at particle {idx}", index=idx)
    return GradientEstimate(g=w @ values, particle_reward=float("nan"), ess=ess(w))


def gradient_forward_kl(system, weights, model, reward, beta_kl, reference_batch) -> GradientEstimate:
    """Reward covariance plus the reference-anchored divergence pull.

    ``- [sum_i w_i R_i grad U_i - (sum w R)(sum w grad U)]
    - beta * [mean_ref grad U - sum_i w_i grad U_i]``
    with every gradient taken at the trainable parameters.
    """
    reference_batch = np.atleast_2d(np.asarray(reference_batch, dtype=float))
    if reference_batch.size == 0:
        raise ConfigurationError("forward divergence needs a non-empty reference batch")
    x = _positions(system)
    w = np.asarray(weights, dtype=float).ravel()
    r = reward.evaluate(x)
    r_bar = float(w @ r)

    g = -model.grad_theta_weighted_sum(x, w * (r - r_bar))
    if beta_kl != 0.0:
        m = reference_batch.shape[0]
        ref_mean = model.grad_theta_weighted_sum(reference_batch, np.full(m, 1.0 / m))
        particle_mean = model.grad_theta_weighted_sum(x, w)
        g = g - beta_kl * (ref_mean - particle_mean)
    return GradientEstimate(g=g, particle_reward=r_bar, ess=ess(w))


def _advantage(x, weights, model_trainable, model_frozen, reward, beta_kl):
    r = reward.evaluate(x)
    d = model_trainable.potential_batch(x) - model_frozen.potential_batch(x)
    if not np.all(np.isfinite(d)):
        idx = int(np.flatnonzero(~np.isfinite(d))[0])
        raise NonFiniteValueError(f"energy difference non-finite at particle {idx}", index=idx)
    return r, d, r + beta_kl * d


def gradient_reverse_kl(system, weights, model_trainable, model_frozen, reward, beta_kl) -> GradientEstimate:
    """Weighted-covariance estimate ``-[sum w A grad U - (sum w A)(sum w grad U)]``.

    The advantage couples the reward with the energy shift away from the
    frozen reference: ``A(x) = R(x) + beta * (U_theta(x) - U_0(x))``, so the
    estimate vanishes exactly when the trainable energy equals the frozen
    energy minus ``R / beta``, the tilted stationary point of the objective.
    """
    x = _positions(system)
    w = np.asarray(weights, dtype=float).ravel()
    r, _, a = _advantage(x, w, model_trainable, model_frozen, reward, beta_kl)
    a_bar = float(w @ a)
    g = -model_trainable.grad_theta_weighted_sum(x, w * (a - a_bar))
    return GradientEstimate(g=g, particle_reward=float(w @ r), ess=ess(w))


def gradient_reverse_kl_expanded(system, weights, model_trainable, model_frozen, reward, beta_kl) -> GradientEstimate:
    """Term-by-term form of :func:`gradient_reverse_kl` over materialised rows.

    Keeps the four weighted sums separate and reads per-sample parameter
    gradients from ``grad_theta_batch``; used to cross-check the fused path.
    """
    x = _positions(system)
    w = np.asarray(weights, dtype=float).ravel()
    r, d, _ = _advantage(x, w, model_trainable, model_frozen, reward, beta_kl)
    rows = model_trainable.grad_theta_batch(x)
    mean_grad = w @ rows
    g = (
        -(w * r) @ rows
        + float(w @ r) * mean_grad
        - beta_kl * ((w * d) @ rows)
        + beta_kl * float(w @ d) * mean_grad
    )
    return GradientEstimate(g=g, particle_reward=float(w @ r), ess=ess(w))


def surrogate_loss_values(system, weights, model_trainable, model_frozen, reward, beta_kl):
    """Scalar surrogates whose analytic descent direction retunes the model.

    Returns ``(reward_surrogate, kl_surrogate)`` where each is a weighted sum
    of the trainable potential against detached centred coefficients:

        reward surrogate   = sum_i w_i (R_i - Rbar) U_theta(x_i)
        divergence surrogate = beta * sum_i w_i (D_i - Dbar) U_theta(x_i)

    with ``D = U_theta - U_0``.  The parameter gradient of their sum (with the
    centred coefficients held constant) equals minus the output of
    :func:`gradient_reverse_kl` on the same particles.
    """
    x = _positions(system)
    w = np.asarray(weights, dtype=float).ravel()
    r, d, _ = _advantage(x, w, model_trainable, model_frozen, reward, beta_kl)
    u = model_trainable.potential_batch(x)
    reward_surrogate = float(np.sum(w * (r - float(w @ r)) * u))
    kl_surrogate = beta_kl * float(np.sum(w * (d - float(w @ d)) * u))
    return reward_surrogate, kl_surrogate


def surrogate_total_gradient(system, weights, model_trainable, model_frozen, reward, beta_kl) -> np.ndarray:
    """Manual reverse-mode gradient of the summed surrogates.

    Only the explicit ``U_theta`` factors are differentiated; the centred
    coefficients are constants, exactly as in the surrogate definition.
    """
    x = _positions(system)
    w = np.asarray(weights, dtype=float).ravel()
    r, d, _ = _advantage(x, w, model_trainable, model_frozen, reward, beta_kl)
    g_reward = model_trainable.grad_theta_weighted_sum(x, w * (r - float(w @ r)))
    g_kl = model_trainable.grad_theta_weighted_sum(x, w * (d - float(w @ d)))
    return g_reward + beta_kl * g_kl


def soul_estimate(chain, burn_in, h_theta) -> GradientEstimate:
    """Unweighted time average of ``H`` over the post-burn-in chain states."""
    chain = np.atleast_2d(np.asarray(chain, dtype=float))
    t = chain.shape[0]
    if burn_in < 0 or burn_in >= t:
        raise ConfigurationError(f"burn_in must lie in [0, {t}); got {burn_in}")
    window = chain[burn_in:]
    n_eff = window.shape[0]
    estimate = gradient_generic(window, np.full(n_eff, 1.0 / n_eff), h_theta)
    return GradientEstimate(g=estimate.g, particle_reward=float("nan"), ess=float(n_eff))
