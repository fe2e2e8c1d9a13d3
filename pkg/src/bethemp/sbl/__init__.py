"""Sparse Bayesian learning solvers for the complex linear model ``y = A x + w``."""

from .denoise import denoise_bg, prior_moments
from .estimators import AMPRegressor, EPRegressor, EPVariantRegressor, HybridSBLRegressor
from .oracles import exact_mmse_gaussian, genie_lmmse, joint_covariance_mmse, nmse, nmse_db
from .problem import (
    HierarchicalGamma,
    SblProblem,
    SolverConfig,
    SolverResult,
    load_problem,
    save_problem,
)
from .solvers import (
    alpha_update,
    lambda_update,
    solve_amp,
    solve_ep,
    solve_ep_variant,
    solve_hybrid,
    support_size,
)

SOLVERS = {
    "ep": solve_ep,
    "ep_variant": solve_ep_variant,
    "amp": solve_amp,
    "hybrid": solve_hybrid,
}

__all__ = [
    "AMPRegressor",
    "EPRegressor",
    "EPVariantRegressor",
    "HybridSBLRegressor",
    "HierarchicalGamma",
    "SOLVERS",
    "SblProblem",
    "SolverConfig",
    "SolverResult",
    "alpha_update",
    "denoise_bg",
    "exact_mmse_gaussian",
    "genie_lmmse",
    "joint_covariance_mmse",
    "lambda_update",
    "load_problem",
    "nmse",
    "nmse_db",
    "prior_moments",
    "save_problem",
    "solve_amp",
    "solve_ep",
    "solve_ep_variant",
    "solve_hybrid",
    "support_size",
]
