"""Diffusion estimation over agent networks with censored regressors."""

__version__ = "0.1.0"
