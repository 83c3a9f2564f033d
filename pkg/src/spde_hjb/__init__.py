"""Stationary HJB equations for spectrally truncated linear SPDE control systems."""

__version__ = "0.1.0"

from .config import ProblemConfig, load_config
from .hjb import build_operator, certify, contraction_bound, h_cv, h_min, make_hamiltonian, solve_fixed_point
from .ou import GridFunction, ou_apply, ou_b_gradient
from .quadrature import ProjectedGaussian, QuadScheme, expect, expect_weighted
from .smoothing import duality_constant, fit_exponent, lambda_norm, lambda_operator
from .spectral import StateVector, make_model, semigroup_apply
from .synthesis import evaluate_cost, simulate_closed_loop

__all__ = [
    "GridFunction", "ProblemConfig", "ProjectedGaussian", "QuadScheme", "StateVector",
    "build_operator", "certify", "contraction_bound", "duality_constant", "evaluate_cost", "expect",
    "expect_weighted", "fit_exponent", "h_cv", "h_min", "lambda_norm", "lambda_operator", "load_config",
    "make_hamiltonian", "make_model", "ou_apply", "ou_b_gradient", "semigroup_apply",
    "simulate_closed_loop", "solve_fixed_point",
]
