"""Bayesian optimisation over learned low-dimensional input-output subspaces."""

__version__ = "0.1.0"
