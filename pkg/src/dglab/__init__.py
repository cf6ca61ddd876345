"""Discrete Gaussian height model: finite-range decompositions, RG flow and Monte Carlo."""

__version__ = "0.1.0"
