"""Subsampling Hamiltonian Monte Carlo for large-n Bayesian inference.

Public surface: the three run drivers (full-data HMC, energy-conserving
subsampling, and the signed Poisson-estimator variant), the logistic
model with control-variate machinery, and the efficiency diagnostics.
"""

from .config import ConfigError, RunConfig, make_config
from .control_variates import (
    CacheMismatchError,
    ControlVariateCache,
    build_cache,
    load_cache,
    save_cache,
)
from .diagnostics import (
    EfficiencyReport,
    computational_time,
    efficiency_report,
    ess,
    inefficiency_factor,
    perturbation_error,
    relative_ct,
    sign_corrected_mean,
)
from .estimators import (
    LogLikEstimate,
    PoissonEstimate,
    grad_loglik_estimate,
    grad_potential,
    loglik_estimate,
    poisson_estimate,
    potential,
)
from .hmc import (
    ChainTrace,
    DivergenceError,
    HamiltonianSpec,
    PhasePoint,
    hmc_step,
    leapfrog,
    run_hmc_ecs,
    run_hmc_ecs_poisson,
    run_hmc_full,
)
from .model import (
    Dataset,
    DomainError,
    LogisticModel,
    Prior,
    QuadraticModel,
    expand_splines,
    generate_synthetic,
    load_csv,
    make_model,
    save_csv,
)
from .subsample import SubsampleState, gibbs_update_u
from .tuning import AdaptationError, DualAveragingState, da_update, refresh_center

__version__ = "1.0.0"

__all__ = [
    "AdaptationError",
    "CacheMismatchError",
    "ChainTrace",
    "ConfigError",
    "ControlVariateCache",
    "Dataset",
    "DivergenceError",
    "DomainError",
    "DualAveragingState",
    "EfficiencyReport",
    "HamiltonianSpec",
    "LogLikEstimate",
    "LogisticModel",
    "PhasePoint",
    "PoissonEstimate",
    "Prior",
    "QuadraticModel",
    "RunConfig",
    "SubsampleState",
    "build_cache",
    "computational_time",
    "da_update",
    "efficiency_report",
    "ess",
    "expand_splines",
    "generate_synthetic",
    "gibbs_update_u",
    "grad_loglik_estimate",
    "grad_potential",
    "hmc_step",
    "inefficiency_factor",
    "leapfrog",
    "load_cache",
    "load_csv",
    "loglik_estimate",
    "make_config",
    "make_model",
    "perturbation_error",
    "poisson_estimate",
    "potential",
    "refresh_center",
    "relative_ct",
    "run_hmc_ecs",
    "run_hmc_ecs_poisson",
    "run_hmc_full",
    "save_cache",
    "save_csv",
    "sign_corrected_mean",
]
