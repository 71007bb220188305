"""Bayesian logistic-growth mixed-effects modelling of repeated-measures
pressure-volume data.

The package fits an increasing logistic curve per individual, ties individuals
together through hierarchical predictors with gender and age covariates, and
samples the joint posterior with an adaptive Metropolis-within-Gibbs engine.
Derived quantities (curve critical points, posterior predictive bands,
population-level outcomes, DIC) are computed from the stored draws.
"""

__version__ = "0.1.0"

from . import data, diagnostics, growth_math, inference, model, sampler
from .errors import GrowthMcError

__all__ = [
    "data",
    "diagnostics",
    "growth_math",
    "inference",
    "model",
    "sampler",
    "GrowthMcError",
    "__version__",
]
