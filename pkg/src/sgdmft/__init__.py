"""Learning curves of (stochastic) gradient descent on high-dimensional Gaussian mixtures.

``simulator`` trains the classifier at finite d; ``dmft`` solves the
d -> infinity effective process; ``analysis`` holds closed-form errors.
"""

from .analysis import gen_error, gen_error_three_cluster, gen_error_two_cluster, oracle_error
from .dmft import KernelSet, SolverConfig, solve_dmft, solve_dyson
from .model import LossModel, MixtureSpec
from .simulator import MetricsSeries, RunParams, run_training

__version__ = "0.1.0"

__all__ = [
    "KernelSet",
    "LossModel",
    "MetricsSeries",
    "MixtureSpec",
    "RunParams",
    "SolverConfig",
    "gen_error",
    "gen_error_three_cluster",
    "gen_error_two_cluster",
    "oracle_error",
    "run_training",
    "solve_dmft",
    "solve_dyson",
]
