"""Closed-form oracles and evaluation machinery.

Everything here sits outside the tuning loop: grid quadrature for
normalisers, divergences and expected rewards on bounded boxes, the Gaussian
closed forms for the population-limit effective sample size, the tilted
optimum of indicator-reward tuning, long-chain fresh-reward evaluation of a
frozen model, and the exact-gradient descent recursion used to check the
idealised convergence rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigurationError, DivergenceError
from .kernels import UlaKernel, ula_step
from .rng import stream_rng

__all__ = [
    "QuadratureGrid",
    "quadrature_log_z",
    "kl_quadrature",
    "expected_reward_quadrature",
    "ess_infinity_gaussian",
    "chi2_gaussian_shift",
    "chi2_small_gamma_check",
    "tilted_optimum",
    "FreshEvalConfig",
    "fresh_reward",
    "idealized_gd_check",
]


@dataclass(frozen=True)
class QuadratureGrid:
    """Uniform midpoint grid over a box, one cell per point.

    ``bounds`` is a sequence of ``(low, high)`` pairs, one per dimension;
    ``points_per_dim`` cells are used along each axis, with evaluation points
    at cell centres so the cells tile the box exactly.
    """

    bounds: tuple
    points_per_dim: int

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        for lo, hi in bounds:
            if not lo < hi:
                raise ConfigurationError("each bound must satisfy low < high")
        if self.points_per_dim < 2:
            raise ConfigurationError("need at least two points per dimension")
        object.__setattr__(self, "bounds", bounds)

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def cell_volume(self) -> float:
        vol = 1.0
        for lo, hi in self.bounds:
            vol *= (hi - lo) / self.points_per_dim
        return vol

    @property
    def points(self) -> np.ndarray:
        axes = [
            lo + (hi - lo) * (np.arange(self.points_per_dim) + 0.5) / self.points_per_dim
            for lo, hi in self.bounds
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


def quadrature_log_z(model, grid: QuadratureGrid) -> float:
    """``log sum_g exp(-U(x_g)) * cell_volume`` with the sum in the log domain."""
    u = np.asarray(model.potential_batch(grid.points), dtype=float)
    if not np.all(np.isfinite(u)):
        raise DivergenceError("potential non-finite on the quadrature grid")
    return float(logsumexp(-u)) + float(np.log(grid.cell_volume))


def kl_quadrature(model_p, model_q, grid: QuadratureGrid) -> float:
    """Grid estimate of ``KL(p || q)`` for two Gibbs models on the box."""
    points = grid.points
    log_zp = quadrature_log_z(model_p, grid)
    log_zq = quadrature_log_z(model_q, grid)
    log_p = -np.asarray(model_p.potential_batch(points)) - log_zp
    log_q = -np.asarray(model_q.potential_batch(points)) - log_zq
    return float(np.sum(np.exp(log_p) * (log_p - log_q)) * grid.cell_volume)


def expected_reward_quadrature(model, reward, grid: QuadratureGrid) -> float:
    """Grid estimate of ``E_pi[R]``; for indicator rewards this is the region mass."""
    points = grid.points
    log_z = quadrature_log_z(model, grid)
    density = np.exp(-np.asarray(model.potential_batch(points)) - log_z)
    return float(np.sum(density * reward.evaluate(points)) * grid.cell_volume)


def ess_infinity_gaussian(n, gamma, grad_l, sigma_inv) -> float:
    """Population-limit ESS after one Gaussian mean shift of size ``gamma * grad_l``.

    Equals ``N exp(-gamma^2 g^T Sigma^{-1} g)``; the finite-population ESS
    divided by N converges to this value over N.
    """
    g = np.atleast_1d(np.asarray(grad_l, dtype=float))
    sigma_inv = np.atleast_2d(np.asarray(sigma_inv, dtype=float))
    quad = float(g @ sigma_inv @ g)
    return float(n) * np.exp(-(gamma**2) * quad)


def chi2_gaussian_shift(delta, sigma_inv) -> float:
    """Chi-square divergence between equal-covariance Gaussians shifted by ``delta``.

    ``exp(delta^T Sigma^{-1} delta) - 1``; satisfies
    ``N / (1 + chi2) = ess_infinity_gaussian`` when ``delta = gamma * grad_l``.
    """
    d = np.atleast_1d(np.asarray(delta, dtype=float))
    sigma_inv = np.atleast_2d(np.asarray(sigma_inv, dtype=float))
    return float(np.expm1(d @ sigma_inv @ d))


def chi2_small_gamma_check(model, gamma, grad_l, points_per_dim=None, box_halfwidth=8.0):
    """Exact Gaussian chi-square next to its small-step quadratic approximation.

    The quadratic term is ``gamma^2 g^T I g`` with the information matrix
    ``I = E[grad_theta U grad_theta U^T]`` evaluated by grid quadrature under
    the model; their ratio tends to one as ``gamma`` shrinks.
    """
    g = np.atleast_1d(np.asarray(grad_l, dtype=float))
    exact = chi2_gaussian_shift(gamma * g, model.sigma_inv)

    scales = np.sqrt(np.diag(model.sigma_cov))
    bounds = [
        (mu - box_halfwidth * s, mu + box_halfwidth * s)
        for mu, s in zip(model.theta, scales)
    ]
    if points_per_dim is None:
        points_per_dim = 4096 if len(bounds) == 1 else 512
    grid = QuadratureGrid(tuple(bounds), points_per_dim)
    points = grid.points
    log_z = quadrature_log_z(model, grid)
    density = np.exp(-np.asarray(model.potential_batch(points)) - log_z)
    rows = model.grad_theta_batch(points)
    info = (rows * density[:, None]).T @ rows * grid.cell_volume
    approx = float(gamma**2 * (g @ info @ g))
    return exact, approx


def tilted_optimum(pi0_mass_h: float, beta_kl: float) -> float:
    """Rewarded-region mass of the exponentially tilted reference distribution.

    For an indicator reward on a region carrying reference mass ``p``, the
    divergence-penalised tuning objective is maximised by tilting the
    reference by ``exp(1/beta)`` on the region, which moves its mass to
    ``e^{1/beta} p / (e^{1/beta} p + 1 - p)``.
    """
    if not 0.0 <= pi0_mass_h <= 1.0:
        raise ConfigurationError("reference mass must lie in [0, 1]")
    if beta_kl <= 0:
        raise ConfigurationError("beta_kl must be positive")
    tilt = np.exp(1.0 / beta_kl)
    return float(tilt * pi0_mass_h / (tilt * pi0_mass_h + 1.0 - pi0_mass_h))


@dataclass(frozen=True)
class FreshEvalConfig:
    """Long-chain evaluation schedule: chains, burn-in, kept steps, init box."""

    n_chains: int = 50
    burn_in: int = 2000
    n_steps: int = 2000
    init_low: float = -6.0
    init_high: float = 6.0

    def __post_init__(self):
        if self.n_chains < 1 or self.n_steps < 1 or self.burn_in < 0:
            raise ConfigurationError("need n_chains >= 1, n_steps >= 1, burn_in >= 0")


def fresh_reward(model_frozen, reward, config: FreshEvalConfig, kernel: UlaKernel,
                 seed: int = 0, rng=None) -> float:
    """Time-and-chain average of the reward under the frozen model.

    Runs ``n_chains`` independent Langevin chains from a diffuse uniform
    initialisation on the box, discards ``burn_in`` steps, then averages the
    reward over the next ``n_steps`` states of every chain.
    """
    if rng is None:
        rng = stream_rng(seed, "eval")
    states = rng.uniform(config.init_low, config.init_high,
                         size=(config.n_chains, model_frozen.dim))
    total = 0.0
    for step in range(config.burn_in + config.n_steps):
        _, grad = model_frozen.energy_and_grad_x_fast(states)
        states = ula_step(states, grad, kernel, rng.standard_normal(states.shape))
        if not np.all(np.isfinite(states)):
            bad = ~np.all(np.isfinite(states), axis=1)
            idx = int(np.flatnonzero(bad)[0])
            raise DivergenceError(f"evaluation chain {idx} diverged at step {step}", index=idx)
        if step >= config.burn_in:
            total += float(np.sum(reward.evaluate(states)))
    return total / (config.n_chains * config.n_steps)


def idealized_gd_check(mu, l_smooth, gamma, k_steps, theta0):
    """Exact gradient descent on the quadratic ``mu * theta^2 / 2``.

    Returns the suboptimality gaps at steps ``0..k_steps``.  Requires
    ``gamma <= 1/L``; each gap then sits under ``(1 - gamma mu)^k`` times the
    initial gap.
    """
    if gamma > 1.0 / l_smooth:
        raise ConfigurationError("step size must not exceed 1/L")
    theta = float(theta0)
    gaps = [0.5 * mu * theta * theta]
    for _ in range(k_steps):
        theta = theta - gamma * mu * theta
        gaps.append(0.5 * mu * theta * theta)
    return np.asarray(gaps)
