"""Adaptively robust empirical Bayes small area estimation (Fay-Herriot model).

Standard and gamma-divergence fits of (beta, A), EB / robust / direct intervals,
data-driven selection of gamma and a Monte Carlo harness.
"""

from ._backend import BACKEND
from .estimator import SolverConfig, fit_gamma, fit_ml
from .inference import (GammaGrid, GammaSelection, analyze, direct_interval, make_interval,
                        population_Q, posterior_moments, robust_posterior_moments, select_gamma,
                        tweedie_check)
from .model import (A_MIN, AreaDataset, as_dataset, AreaInference, GammaFit, ModelParams, NonFinite,
                    NonPositiveVariance, NotConverged, OutOfRange, RankDeficient, SAEError,
                    TooFewAreas, normal_pdf, normal_quantile, validate_dataset)
from .objective import ObjectiveValue, gamma_objective, gamma_term, marginal_loglik
from .simulator import (SimReport, SimScenario, generate_replication, run_fixed_gamma_study,
                        run_monte_carlo, separability_rho)

__version__ = "0.1.0"
