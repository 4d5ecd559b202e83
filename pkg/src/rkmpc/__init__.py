"""Robust tube MPC on data-driven lifted linear predictors."""

__version__ = "0.1.0"
