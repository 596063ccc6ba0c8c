"""Bayesian principal stratification for trials with treatment discontinuation.

Simulate trials under two scenarios, fit the augmented-posterior model by
Metropolis-within-Gibbs and summarize principal causal effects with HPD
intervals.
"""
from ._backend import BACKEND
from .errors import NumericError, ValidationError

__version__ = "0.1.0"

__all__ = ["BACKEND", "NumericError", "ValidationError", "__version__"]
