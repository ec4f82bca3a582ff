"""Bayesian density estimation with a knot mixture of product Gaussian kernels,
with Gibbs-sampled imputation of missing cells."""

__version__ = "0.1.0"

from .data import DataMatrix
from .mixture import (
    KnotGrid,
    MixtureParams,
    PriorSpec,
    conditional_expectation,
    conditional_sample,
    conditional_weights,
    default_priors,
    density,
    marginal_cdf,
    marginal_density,
    silverman_bandwidth,
)
from .knots import select_knots
from .samplers import PosteriorTrace, SamplerConfig, impute, run_gmdi, run_tbmde
from .selection import select_m
from .evaluation import evaluate_run, ks_test, mean_marginal_cdf, mse

__all__ = [
    "DataMatrix", "KnotGrid", "MixtureParams", "PriorSpec", "PosteriorTrace", "SamplerConfig",
    "conditional_expectation", "conditional_sample", "conditional_weights", "default_priors",
    "density", "marginal_cdf", "marginal_density", "silverman_bandwidth", "select_knots",
    "impute", "run_gmdi", "run_tbmde", "select_m", "evaluate_run", "ks_test",
    "mean_marginal_cdf", "mse",
]
