"""Self-contained verification suite behind the ``check`` command.

Each check pits an implementation path against an independent oracle
(closed form, quadrature, finite differences or a second derivation of the
same quantity) and reports measured values alongside a pass/fail flag, so
the command's JSON report is machine-readable.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .diagnostics import (
    QuadratureGrid,
    chi2_small_gamma_check,
    ess_infinity_gaussian,
    idealized_gd_check,
    kl_quadrature,
    tilted_optimum,
)
from .errors import ConfigurationError
from .estimators import gradient_reverse_kl, surrogate_total_gradient
from .kernels import UlaKernel, alpha_values, incremental_log_weight, incremental_log_weight_direct, ula_step
from .models import GaussianLocation, MlpEnergy
from .particles import ParticleSystem, ess, normalize_weights, resample
from .rewards import HalfPlaneReward

__all__ = ["CheckResult", "run_checks", "CHECK_NAMES", "report_dict"]


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)
    detail: str = ""


def check_weight_identity(n_instances=1000, seed=123) -> CheckResult:
    """Compact one-point weight summary vs direct Gaussian density ratio."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        dim = int(rng.integers(1, 4))
        gamma = float(10 ** rng.uniform(-4, -1))
        kernel = UlaKernel(gamma, 1.0)
        model_prev = GaussianLocation(rng.standard_normal(dim))
        model_curr = GaussianLocation(rng.standard_normal(dim))
        x_prev = rng.standard_normal((8, dim)) * 2.0
        grad_prev = model_prev.grad_x_batch(x_prev)
        x_curr = ula_step(x_prev, grad_prev, kernel, rng.standard_normal((8, dim)))
        compact = incremental_log_weight(model_prev, model_curr, x_prev, x_curr, kernel)
        direct = incremental_log_weight_direct(model_prev, model_curr, x_prev, x_curr, kernel)
        worst = max(worst, float(np.max(np.abs(compact - direct))))
    return CheckResult(
        name="weight_identity",
        passed=worst < 1e-9,
        measured={"max_abs_difference": worst, "instances": n_instances},
        detail="compact vs direct log-weights on randomised Gaussian pairs",
    )


def _tracked_gradient_sqerr(n, n_steps, seed, eta=0.1, gamma=0.1, b=1.0):
    """Squared errors of the weighted gradient along a drifting-mean run.

    The target is a unit Gaussian whose mean follows the optimiser; the
    integrand ``theta - x - b`` has exact expectation ``-b`` at every step,
    so each estimate's error is directly observable.
    """
    rng = np.random.default_rng(seed)
    kernel = UlaKernel(gamma, 1.0)
    theta = 0.0
    x = rng.standard_normal((n, 1))
    log_w = np.zeros(n)
    sqerrs = []
    for _ in range(n_steps):
        w = normalize_weights(log_w)
        g = float(w @ (theta - x[:, 0] - b))
        sqerrs.append((g - (-b)) ** 2)
        theta_new = theta - eta * g
        model_prev = GaussianLocation([theta])
        model_curr = GaussianLocation([theta_new])
        grad_prev = model_prev.grad_x_batch(x)
        u_prev = model_prev.potential_batch(x)
        x_new = ula_step(x, grad_prev, kernel, rng.standard_normal((n, 1)))
        a_prev = alpha_values(u_prev, grad_prev, x, x_new, gamma)
        a_curr = alpha_values(model_curr.potential_batch(x_new),
                              model_curr.grad_x_batch(x_new), x_new, x, gamma)
        log_w = log_w + (a_prev - a_curr)
        log_w -= np.max(log_w)
        w_new = normalize_weights(log_w)
        if ess(w_new) < 0.5 * n:
            system = resample(ParticleSystem(x_new, log_w), rng)
            x_new, log_w = system.positions, system.log_weights
        x, theta = x_new, theta_new
    return sqerrs


def check_gradient_mse_slope(sizes=(100, 1000, 10000), replicates=100,
                             n_steps=5, seed=2024) -> CheckResult:
    """Weighted-gradient MSE should shrink like 1/N (log-log slope -1)."""
    mses = []
    for j, n in enumerate(sizes):
        errs = []
        for rep in range(replicates):
            errs.extend(_tracked_gradient_sqerr(n, n_steps, seed + 1000 * j + rep))
        mses.append(float(np.mean(errs)))
    slope = float(np.polyfit(np.log(np.asarray(sizes, dtype=float)), np.log(mses), 1)[0])
    return CheckResult(
        name="gradient_mse_slope",
        passed=abs(slope + 1.0) < 0.3,
        measured={"slope": slope, **{f"mse_n{n}": m for n, m in zip(sizes, mses)}},
        detail="drifting-Gaussian weighted gradient, exact expectation known",
    )


def check_descent_rate() -> CheckResult:
    """Exact-gradient descent on a quadratic meets the geometric rate bound."""
    worst = -np.inf
    for mu, gamma in ((1.0, 0.5), (1.0, 1.0), (0.5, 1.0)):
        if gamma > 1.0 / mu:
            continue
        gaps = idealized_gd_check(mu, mu, gamma, k_steps=30, theta0=5.0)
        bound = gaps[0] * (1.0 - gamma * mu) ** np.arange(gaps.size)
        worst = max(worst, float(np.max(gaps - bound)))
    return CheckResult(
        name="descent_rate",
        passed=worst <= 1e-12,
        measured={"max_gap_minus_bound": worst},
        detail="suboptimality gap under (1 - gamma mu)^k times the initial gap",
    )


def check_ess_limit(n=100_000, seed=5) -> CheckResult:
    """Empirical ESS after one exact-sample reweight vs the Gaussian limit."""
    rng = np.random.default_rng(seed)
    grad = np.array([2.0, 0.0])
    worst = 0.0
    measured = {}
    for gamma in (0.05, 0.1, 0.2):
        model_prev = GaussianLocation([0.0, 0.0])
        model_curr = GaussianLocation(-gamma * grad)
        x = model_prev.sample(rng, n)
        w = normalize_weights(model_prev.potential_batch(x) - model_curr.potential_batch(x))
        empirical = ess(w) / n
        limit = ess_infinity_gaussian(n, gamma, grad, model_prev.sigma_inv) / n
        rel = abs(empirical - limit) / limit
        measured[f"rel_err_gamma{gamma}"] = rel
        worst = max(worst, rel)
    return CheckResult(
        name="ess_limit_gaussian",
        passed=worst < 0.05,
        measured=measured,
        detail="one-step reweight of exact Gaussian samples at three step sizes",
    )


def check_chi2_small_step() -> CheckResult:
    """Exact/quadratic chi-square ratio at gamma^2 |g|^2 = 0.01."""
    exact, approx = chi2_small_gamma_check(GaussianLocation([0.0]), gamma=0.1, grad_l=[1.0])
    ratio = exact / approx
    expected = float(np.expm1(0.01) / 0.01)
    err = abs(ratio - expected)
    return CheckResult(
        name="chi2_small_step",
        passed=err < 1e-4,
        measured={"ratio": ratio, "expected": expected, "abs_err": err},
        detail="information matrix from quadrature on a unit Gaussian",
    )


def check_kl_quadrature_analytic() -> CheckResult:
    """Grid divergence vs the closed form for unit-variance Gaussians."""
    grid = QuadratureGrid(((-10.0, 10.0),), 4096)
    same = kl_quadrature(GaussianLocation([0.0]), GaussianLocation([0.0]), grid)
    shifted = kl_quadrature(GaussianLocation([0.0]), GaussianLocation([1.0]), grid)
    rng = np.random.default_rng(17)
    min_kl = np.inf
    for _ in range(20):
        a = GaussianLocation([rng.uniform(-2, 2)])
        b = GaussianLocation([rng.uniform(-2, 2)])
        min_kl = min(min_kl, kl_quadrature(a, b, grid))
    passed = abs(same) < 1e-10 and abs(shifted - 0.5) < 1e-4 and min_kl >= -1e-9
    return CheckResult(
        name="kl_quadrature_analytic",
        passed=passed,
        measured={"identical": same, "unit_shift": shifted, "min_over_random_pairs": float(min_kl)},
        detail="expected 0 and 0.5; non-negative over random pairs",
    )


def check_tilted_optimum_monotonic() -> CheckResult:
    """Tilted mass decreases in beta and increases in the reference mass."""
    masses = np.linspace(0.02, 0.98, 20)
    betas = np.linspace(0.05, 5.0, 20)
    table = np.array([[tilted_optimum(p, b) for b in betas] for p in masses])
    monotone_beta = bool(np.all(np.diff(table, axis=1) < 0))
    monotone_mass = bool(np.all(np.diff(table, axis=0) > 0))
    return CheckResult(
        name="tilted_optimum_monotonic",
        passed=monotone_beta and monotone_mass,
        measured={"monotone_in_beta": monotone_beta, "monotone_in_mass": monotone_mass},
        detail="20 x 20 grid of (reference mass, beta)",
    )


def check_surrogate_gradient_equality(n_instances=50, seed=99) -> CheckResult:
    """Reverse sweep of the surrogate pair vs the negated covariance estimate."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        width = int(rng.integers(3, 7))
        net = MlpEnergy.initialize(2, hidden_width=width, n_hidden=2, rng=rng, weight_std=0.3)
        frozen = net.with_theta(net.theta + 0.1 * rng.standard_normal(net.n_params))
        x = rng.standard_normal((16, 2)) * 1.5
        w = normalize_weights(rng.standard_normal(16))
        beta = float(rng.uniform(0.05, 2.0))
        reward = HalfPlaneReward(side=("lower", "upper", "left", "right")[int(rng.integers(4))])
        est = gradient_reverse_kl(x, w, net, frozen, reward, beta)
        surr = surrogate_total_gradient(x, w, net, frozen, reward, beta)
        worst = max(worst, float(np.max(np.abs(surr - (-est.g)))))
    return CheckResult(
        name="surrogate_gradient_equality",
        passed=worst < 1e-9,
        measured={"max_abs_difference": worst, "instances": n_instances},
        detail="randomised small networks, weights and penalties",
    )


_CHECKS = {
    "weight_identity": check_weight_identity,
    "gradient_mse_slope": check_gradient_mse_slope,
    "descent_rate": check_descent_rate,
    "ess_limit_gaussian": check_ess_limit,
    "chi2_small_step": check_chi2_small_step,
    "kl_quadrature_analytic": check_kl_quadrature_analytic,
    "tilted_optimum_monotonic": check_tilted_optimum_monotonic,
    "surrogate_gradient_equality": check_surrogate_gradient_equality,
}

CHECK_NAMES = tuple(_CHECKS)


def run_checks(only=None) -> list[CheckResult]:
    names = CHECK_NAMES if only is None else tuple(only)
    results = []
    for name in names:
        if name not in _CHECKS:
            raise ConfigurationError(f"unknown check {name!r}; known: {sorted(_CHECKS)}")
        results.append(_CHECKS[name]())
    return results


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def report_dict(results) -> dict:
    return {
        "all_passed": all(r.passed for r in results),
        "checks": [_plain(asdict(r)) for r in results],
    }
