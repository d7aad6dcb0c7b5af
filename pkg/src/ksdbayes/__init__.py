"""Generalised Bayesian inference with kernel Stein discrepancy losses."""

__version__ = "0.1.0"
