"""Bayesian distributionally robust optimization with KL ambiguity sets."""

from .calibration import AmbiguitySpec, calibrate, estimate_kl_empirical, min_kl_ball
from .cost_models import Newsvendor, Portfolio
from .posterior import BayesModel, ProductModel, build_scenarios
from .robust_inner import kl_inner, kl_inner_approx, phi_dual_inner
from .solvers import (
    SolveResult,
    SolverConfig,
    bayesian_average_solve,
    bayesian_dro_solve,
    empirical_kl_dro_solve,
    empirical_saa_solve,
    relaxed_bdro_solve,
    wasserstein_dro_solve,
)

__version__ = "0.1.0"
