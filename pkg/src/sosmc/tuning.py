"""The three tuning loops: weighted-population, unweighted-population, single-chain.

All three drive the same first-order parameter recursion and spend the same
kernel budget per outer iteration (``N * k_inner`` Langevin moves for the two
population methods, ``N`` moves of one chain for the single-chain method);
they differ only in how expectations under the moving target are estimated.

Per outer iteration the weighted loop follows a fixed order: normalise the
accumulated log-weights, estimate the gradient on the current population,
update the parameters, then propagate every particle under the pre-update
model and fold the propagation into the weights using both the pre- and
post-update potentials.  The spatial gradient of the pre-update potential is
evaluated once per particle and shared between the move and its weight term,
so one iteration costs exactly two spatial-gradient sweeps.  Weights are
recentred by their maximum every iteration; when the effective sample size
falls below ``tau_resample * N`` the population is resampled categorically
and the weights reset.  Optionally the kernel step size is adapted
multiplicatively against ``tau_adapt * N``.

Runs are pure functions of (problem, config): every random draw comes from a
named substream of the config seed, so repeated invocations are bit-identical.
Measured wall-clock time is collected per iteration but kept out of the
serialised trace unless explicitly requested, which keeps written artifacts
byte-stable across reruns.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .diagnostics import FreshEvalConfig, QuadratureGrid, fresh_reward, kl_quadrature
from .errors import (
    ConfigurationError,
    DegenerateWeightsError,
    DivergenceError,
    WeightOverflowError,
)
from .estimators import (
    gradient_forward_kl,
    gradient_generic,
    gradient_reverse_kl,
)
from .kernels import UlaKernel, alpha_values, ula_step
from .optim import StepSizeAdapter, adapt_gamma, make_opt_state, opt_step
from .particles import ParticleSystem, ess, normalize_weights, resample
from .rng import stream_rng

__all__ = [
    "OptimizerSpec",
    "TuningConfig",
    "TuningProblem",
    "TuningTrace",
    "sosmc_run",
    "impdiff_run",
    "soul_run",
    "run_method",
    "TRACE_COLUMNS",
]

TRACE_COLUMNS = (
    "k", "particle_reward", "ess", "gamma", "grad_norm",
    "resampled", "wall_clock_s", "fresh_reward", "kl_quadrature",
)


@dataclass(frozen=True)
class OptimizerSpec:
    method: str = "adam"
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    grad_clip_norm: float | None = None


@dataclass(frozen=True)
class TuningConfig:
    """Everything a run needs besides the live model/reward objects."""

    objective: str
    n_particles: int
    n_iterations: int
    seed: int
    gamma: float = 5e-3
    sigma_noise: float = 1.0
    k_inner: int = 1
    beta_kl: float = 0.0
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    tau_resample: float = 0.9
    adapt_step_size: bool = False
    tau_adapt: float = 0.95
    adapt_factor: float = 1.1
    reference_batch_size: int = 5000
    eval_every: int = 0
    fresh_eval: FreshEvalConfig = field(default_factory=FreshEvalConfig)
    eval_gamma: float | None = None
    kl_grid_points: int = 256
    kl_box_halfwidth: float = 6.0
    wall_clock_budget_s: float | None = None

    def __post_init__(self):
        if self.objective not in ("generic", "forward_kl", "reverse_kl"):
            raise ConfigurationError(f"unknown objective {self.objective!r}")
        if self.n_particles < 1:
            raise ConfigurationError("need at least one particle")
        if self.n_iterations < 0:
            raise ConfigurationError("n_iterations must be non-negative")
        if self.k_inner < 1:
            raise ConfigurationError("k_inner must be at least 1")
        if not 0.0 <= self.tau_resample < 1.0:
            raise ConfigurationError("tau_resample must lie in [0, 1)")
        if self.gamma <= 0 or self.sigma_noise <= 0:
            raise ConfigurationError("gamma and sigma_noise must be positive")
        if self.eval_every < 0:
            raise ConfigurationError("eval_every must be non-negative")


@dataclass(frozen=True)
class TuningProblem:
    """Live objects of one tuning task.

    ``model`` carries the initial trainable parameters.  Exactly the fields
    matching the configured objective are required: a reward plus a frozen
    reference copy for the reverse divergence, a reward plus a sampleable
    reference model for the forward divergence, or an integrand factory
    (``model -> batched H``) for the generic objective.  ``init_sampler``
    overrides how the initial population is drawn; by default the model's own
    exact sampler is used.
    """

    model: object
    reward: object = None
    frozen_model: object = None
    reference_model: object = None
    h_factory: object = None
    init_sampler: object = None

    def initial_positions(self, rng, n):
        if self.init_sampler is not None:
            return np.atleast_2d(np.asarray(self.init_sampler(rng, n), dtype=float))
        if hasattr(self.model, "sample"):
            return self.model.sample(rng, n)
        raise ConfigurationError(
            "model has no exact sampler; supply init_sampler on the problem"
        )

    def kl_reference(self):
        return self.frozen_model if self.frozen_model is not None else self.reference_model


@dataclass
class TuningTrace:
    """Per-iteration log plus sparse evaluation checkpoints."""

    k: list = field(default_factory=list)
    particle_reward: list = field(default_factory=list)
    ess: list = field(default_factory=list)
    gamma: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    resampled: list = field(default_factory=list)
    wall_clock_s: list = field(default_factory=list)
    fresh_rewards: dict = field(default_factory=dict)
    kl_values: dict = field(default_factory=dict)
    kernel_applications: int = 0

    def append(self, k, particle_reward, ess_value, gamma, grad_norm, resampled, wall):
        self.k.append(int(k))
        self.particle_reward.append(float(particle_reward))
        self.ess.append(float(ess_value))
        self.gamma.append(float(gamma))
        self.grad_norm.append(float(grad_norm))
        self.resampled.append(bool(resampled))
        self.wall_clock_s.append(float(wall))

    def __len__(self):
        return len(self.k)

    def to_csv(self, path_or_buffer, include_timing=False):
        """Write the trace; the timing column stays empty unless requested."""
        def fmt(x):
            return "%.17g" % x

        lines = [",".join(TRACE_COLUMNS)]
        for i, k in enumerate(self.k):
            row = [
                str(k),
                fmt(self.particle_reward[i]),
                fmt(self.ess[i]),
                fmt(self.gamma[i]),
                fmt(self.grad_norm[i]),
                "1" if self.resampled[i] else "0",
                fmt(self.wall_clock_s[i]) if include_timing else "",
                fmt(self.fresh_rewards[k]) if k in self.fresh_rewards else "",
                fmt(self.kl_values[k]) if k in self.kl_values else "",
            ]
            lines.append(",".join(row))
        text = "\n".join(lines) + "\n"
        if isinstance(path_or_buffer, (str, bytes)) or hasattr(path_or_buffer, "__fspath__"):
            with open(path_or_buffer, "w") as fh:
                fh.write(text)
        else:
            path_or_buffer.write(text)
        return text


def _theta_digest(theta):
    return hashlib.sha256(np.ascontiguousarray(theta, dtype="<f8").tobytes()).hexdigest()


def run_summary(method, config: TuningConfig, theta, trace: TuningTrace,
                include_timing=False) -> dict:
    """Machine-readable run summary: config echo, parameter digest, terminal metrics."""
    summary = {
        "method": method,
        "config": asdict(config),
        "theta_digest": _theta_digest(theta),
        "n_params": int(np.asarray(theta).size),
        "iterations": len(trace),
        "kernel_applications": trace.kernel_applications,
        "terminal": {
            "particle_reward": trace.particle_reward[-1] if len(trace) else None,
            "ess": trace.ess[-1] if len(trace) else None,
            "gamma": trace.gamma[-1] if len(trace) else None,
            "grad_norm": trace.grad_norm[-1] if len(trace) else None,
        },
    }
    if trace.fresh_rewards:
        last = max(trace.fresh_rewards)
        summary["terminal"]["fresh_reward"] = trace.fresh_rewards[last]
    if trace.kl_values:
        last = max(trace.kl_values)
        summary["terminal"]["kl_quadrature"] = trace.kl_values[last]
    if include_timing:
        summary["wall_clock_s_total"] = float(np.sum(trace.wall_clock_s))
    return summary


# -- shared loop plumbing -----------------------------------------------------


def _validate_problem(problem: TuningProblem, config: TuningConfig):
    if config.objective == "generic":
        if problem.h_factory is None:
            raise ConfigurationError("generic objective needs an h_factory")
        if config.eval_every > 0:
            raise ConfigurationError("fresh-reward checkpoints need a reward objective")
    elif config.objective == "forward_kl":
        if problem.reward is None or problem.reference_model is None:
            raise ConfigurationError("forward_kl needs a reward and a reference_model")
        if not hasattr(problem.reference_model, "sample"):
            raise ConfigurationError("the forward-divergence reference model must be sampleable")
    elif config.objective == "reverse_kl":
        if problem.reward is None or problem.frozen_model is None:
            raise ConfigurationError("reverse_kl needs a reward and a frozen_model")


def _make_estimator(problem: TuningProblem, config: TuningConfig, rng_ref):
    """Return (estimate_fn, is_ascent): estimate_fn(model, positions, weights)."""
    if config.objective == "generic":
        def estimate(model, positions, weights):
            return gradient_generic(positions, weights, problem.h_factory(model))
        return estimate, False
    if config.objective == "forward_kl":
        def estimate(model, positions, weights):
            batch = problem.reference_model.sample(rng_ref, config.reference_batch_size)
            return gradient_forward_kl(positions, weights, model, problem.reward,
                                       config.beta_kl, batch)
        return estimate, True

    def estimate(model, positions, weights):
        return gradient_reverse_kl(positions, weights, model, problem.frozen_model,
                                   problem.reward, config.beta_kl)
    return estimate, True


def _propagate_and_weight(model_prev, model_curr, x, log_w, kernel, rng, carry_weights):
    """One Langevin move for every particle, with the matching weight increment.

    The potential and its spatial gradient under the pre-move model are
    evaluated in one sweep and shared between the move and its weight term;
    the post-move model is evaluated once at the new positions.
    """
    u_prev, grad_prev = model_prev.energy_and_grad_x_fast(x)
    noise = rng.standard_normal(x.shape)
    x_new = ula_step(x, grad_prev, kernel, noise)
    if not np.all(np.isfinite(x_new)):
        bad = ~np.all(np.isfinite(x_new), axis=1)
        idx = int(np.flatnonzero(bad)[0])
        raise DivergenceError(f"particle {idx} diverged", index=idx)
    if not carry_weights:
        return x_new, log_w
    a_prev = alpha_values(u_prev, grad_prev, x, x_new, kernel.gamma, kernel.sigma_noise)
    u_curr, grad_curr = model_curr.energy_and_grad_x_fast(x_new)
    a_curr = alpha_values(u_curr, grad_curr, x_new, x, kernel.gamma, kernel.sigma_noise)
    log_w_new = log_w + (a_prev - a_curr)
    if not np.all(np.isfinite(log_w_new)):
        raise WeightOverflowError("incremental log-weight is non-finite")
    return x_new, log_w_new


def _maybe_checkpoint(problem, config, model, k, trace, seed):
    if config.eval_every <= 0:
        return
    if (k + 1) % config.eval_every != 0 and k != config.n_iterations - 1:
        return
    eval_gamma = config.eval_gamma if config.eval_gamma is not None else config.gamma
    kernel = UlaKernel(eval_gamma, config.sigma_noise)
    trace.fresh_rewards[k] = fresh_reward(
        model, problem.reward, config.fresh_eval, kernel,
        rng=stream_rng(seed, "eval", k),
    )
    reference = problem.kl_reference()
    if reference is not None and model.dim == reference.dim:
        half = config.kl_box_halfwidth
        grid = QuadratureGrid(tuple((-half, half) for _ in range(model.dim)),
                              config.kl_grid_points)
        trace.kl_values[k] = kl_quadrature(model, reference, grid)


def _attach_trace(exc, trace):
    exc.trace = trace
    return exc


def sosmc_run(problem: TuningProblem, config: TuningConfig):
    """Weighted-population tuning; returns ``(theta_final, trace)``.

    Raises
    ------
    DegenerateWeightsError
        On sampler collapse; the partial trace rides on the exception's
        ``trace`` attribute so callers can flush it.
    """
    _validate_problem(problem, config)
    rng_init = stream_rng(config.seed, "init")
    rng_prop = stream_rng(config.seed, "propagate")
    rng_res = stream_rng(config.seed, "resample")
    rng_ref = stream_rng(config.seed, "reference")
    estimate, is_ascent = _make_estimator(problem, config, rng_ref)

    model = problem.model
    x = problem.initial_positions(rng_init, config.n_particles)
    log_w = np.zeros(config.n_particles)
    opt = make_opt_state(config.optimizer.method, config.optimizer.learning_rate,
                         model.n_params, config.optimizer.beta1, config.optimizer.beta2,
                         config.optimizer.epsilon, config.optimizer.grad_clip_norm)
    adapter = StepSizeAdapter(config.gamma, config.adapt_factor, config.tau_adapt)
    trace = TuningTrace()
    elapsed = 0.0

    for k in range(config.n_iterations):
        tic = time.perf_counter()
        gamma_k = adapter.gamma
        kernel = UlaKernel(gamma_k, config.sigma_noise)
        try:
            w = normalize_weights(log_w)
            est = estimate(model, x, w)
            loss_grad = -est.g if is_ascent else est.g
            opt, theta_new = opt_step(opt, model.theta, loss_grad)
            model_prev = model
            model = model.with_theta(theta_new)

            x, log_w = _propagate_and_weight(model_prev, model, x, log_w, kernel,
                                             rng_prop, carry_weights=True)
            for _ in range(config.k_inner - 1):
                x, log_w = _propagate_and_weight(model, model, x, log_w, kernel,
                                                 rng_prop, carry_weights=True)
            trace.kernel_applications += config.n_particles * config.k_inner

            log_w = log_w - np.max(log_w)
            w_new = normalize_weights(log_w)
        except (DegenerateWeightsError, DivergenceError, WeightOverflowError) as exc:
            raise _attach_trace(exc, trace)

        ess_new = ess(w_new)
        did_resample = ess_new < config.tau_resample * config.n_particles
        if did_resample:
            system = resample(ParticleSystem(x, log_w, step_index=k), rng_res)
            x, log_w = system.positions, system.log_weights
        if config.adapt_step_size:
            adapter = adapt_gamma(adapter, ess_new, config.n_particles)

        wall = time.perf_counter() - tic
        elapsed += wall
        trace.append(k, est.particle_reward, ess_new, gamma_k,
                     float(np.linalg.norm(est.g)), did_resample, wall)
        _maybe_checkpoint(problem, config, model, k, trace, config.seed)
        if config.wall_clock_budget_s is not None and elapsed >= config.wall_clock_budget_s:
            break

    return model.theta, trace


def impdiff_run(problem: TuningProblem, config: TuningConfig):
    """Unweighted persistent-population tuning; returns ``(theta_final, trace)``."""
    _validate_problem(problem, config)
    if config.adapt_step_size:
        raise ConfigurationError("step-size adaptation needs weights; it applies to sosmc only")
    rng_init = stream_rng(config.seed, "init")
    rng_prop = stream_rng(config.seed, "propagate")
    rng_ref = stream_rng(config.seed, "reference")
    estimate, is_ascent = _make_estimator(problem, config, rng_ref)

    model = problem.model
    x = problem.initial_positions(rng_init, config.n_particles)
    uniform = np.full(config.n_particles, 1.0 / config.n_particles)
    opt = make_opt_state(config.optimizer.method, config.optimizer.learning_rate,
                         model.n_params, config.optimizer.beta1, config.optimizer.beta2,
                         config.optimizer.epsilon, config.optimizer.grad_clip_norm)
    trace = TuningTrace()
    elapsed = 0.0

    for k in range(config.n_iterations):
        tic = time.perf_counter()
        kernel = UlaKernel(config.gamma, config.sigma_noise)
        try:
            est = estimate(model, x, uniform)
            loss_grad = -est.g if is_ascent else est.g
            opt, theta_new = opt_step(opt, model.theta, loss_grad)
            model_prev = model
            model = model.with_theta(theta_new)
            x, _ = _propagate_and_weight(model_prev, model, x, None, kernel,
                                         rng_prop, carry_weights=False)
            for _ in range(config.k_inner - 1):
                x, _ = _propagate_and_weight(model, model, x, None, kernel,
                                             rng_prop, carry_weights=False)
            trace.kernel_applications += config.n_particles * config.k_inner
        except (DivergenceError, WeightOverflowError) as exc:
            raise _attach_trace(exc, trace)

        wall = time.perf_counter() - tic
        elapsed += wall
        trace.append(k, est.particle_reward, float(config.n_particles), config.gamma,
                     float(np.linalg.norm(est.g)), False, wall)
        _maybe_checkpoint(problem, config, model, k, trace, config.seed)
        if config.wall_clock_budget_s is not None and elapsed >= config.wall_clock_budget_s:
            break

    return model.theta, trace


def soul_run(problem: TuningProblem, config: TuningConfig):
    """Single persistent-chain tuning; returns ``(theta_final, trace)``.

    Each outer iteration advances one chain ``n_particles`` steps under the
    pre-update model, keeps the second half as the estimation window, and
    feeds its unweighted average to the optimiser.  The chain's terminal
    state persists across outer iterations.
    """
    _validate_problem(problem, config)
    if config.adapt_step_size:
        raise ConfigurationError("step-size adaptation needs weights; it applies to sosmc only")
    if config.n_particles % 2 != 0:
        raise ConfigurationError("the chain length must be even (half is burn-in)")
    rng_init = stream_rng(config.seed, "init")
    rng_prop = stream_rng(config.seed, "propagate")
    rng_ref = stream_rng(config.seed, "reference")
    estimate, is_ascent = _make_estimator(problem, config, rng_ref)

    model = problem.model
    state = problem.initial_positions(rng_init, 1)
    n_burn = config.n_particles // 2
    n_eff = config.n_particles - n_burn
    window_weights = np.full(n_eff, 1.0 / n_eff)
    opt = make_opt_state(config.optimizer.method, config.optimizer.learning_rate,
                         model.n_params, config.optimizer.beta1, config.optimizer.beta2,
                         config.optimizer.epsilon, config.optimizer.grad_clip_norm)
    trace = TuningTrace()
    elapsed = 0.0

    for k in range(config.n_iterations):
        tic = time.perf_counter()
        kernel = UlaKernel(config.gamma, config.sigma_noise)
        try:
            chain = np.empty((config.n_particles, model.dim))
            for step in range(config.n_particles):
                state, _ = _propagate_and_weight(model, model, state, None, kernel,
                                                 rng_prop, carry_weights=False)
                chain[step] = state[0]
            trace.kernel_applications += config.n_particles

            window = chain[n_burn:]
            est = estimate(model, window, window_weights)
            loss_grad = -est.g if is_ascent else est.g
            opt, theta_new = opt_step(opt, model.theta, loss_grad)
            model = model.with_theta(theta_new)
        except (DivergenceError, WeightOverflowError) as exc:
            raise _attach_trace(exc, trace)

        wall = time.perf_counter() - tic
        elapsed += wall
        trace.append(k, est.particle_reward, float(n_eff), config.gamma,
                     float(np.linalg.norm(est.g)), False, wall)
        _maybe_checkpoint(problem, config, model, k, trace, config.seed)
        if config.wall_clock_budget_s is not None and elapsed >= config.wall_clock_budget_s:
            break

    return model.theta, trace


_METHODS = {"sosmc": sosmc_run, "impdiff": impdiff_run, "soul": soul_run}


def run_method(method: str, problem: TuningProblem, config: TuningConfig):
    try:
        runner = _METHODS[method.lower()]
    except KeyError:
        raise ConfigurationError(f"unknown method {method!r}; choose from {sorted(_METHODS)}")
    return runner(problem, config)
