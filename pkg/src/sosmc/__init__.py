"""Stochastic optimisation with sequential Monte Carlo gradient estimators.

Losses whose gradients are expectations under a parameter-dependent Gibbs
distribution are minimised by pairing a first-order optimiser with a weighted
particle population: one Langevin move and one importance-weight update per
optimiser step, resampling on effective-sample-size collapse.  Unweighted
persistent-particle and single-long-chain baselines share the same loop
scaffolding, and closed-form oracles (Gaussian limits, grid quadrature,
tilted optima) back the test suite.
"""

from .particles import ParticleSystem, ess, normalize_weights, resample, weighted_mean
from .kernels import (
    UlaKernel,
    alpha,
    incremental_log_weight,
    incremental_log_weight_direct,
    ula_step,
)
from .models import (
    GaussianLocation,
    GibbsModel,
    MixturePotential,
    MlpEnergy,
    load_model,
    model_from_dict,
    model_to_dict,
    save_model,
)
from .rewards import (
    GatedGaussianReward,
    HalfPlaneReward,
    MultiModalReward,
    SmoothGatedReward,
    reward_from_spec,
)
from .estimators import (
    GradientEstimate,
    gradient_forward_kl,
    gradient_generic,
    gradient_reverse_kl,
    gradient_reverse_kl_expanded,
    soul_estimate,
    surrogate_loss_values,
    surrogate_total_gradient,
)
from .optim import OptState, StepSizeAdapter, adam_step, adapt_gamma, make_opt_state, sgd_step
from .tuning import (
    OptimizerSpec,
    TuningConfig,
    TuningProblem,
    TuningTrace,
    impdiff_run,
    run_method,
    sosmc_run,
    soul_run,
)
from .pretrain import (
    Dataset2D,
    PcdConfig,
    ReplayBuffer,
    clamped_ula_step,
    generate_dataset,
    pcd_train,
)
from .diagnostics import (
    FreshEvalConfig,
    QuadratureGrid,
    chi2_gaussian_shift,
    chi2_small_gamma_check,
    ess_infinity_gaussian,
    expected_reward_quadrature,
    fresh_reward,
    idealized_gd_check,
    kl_quadrature,
    quadrature_log_z,
    tilted_optimum,
)

__version__ = "0.1.0"
