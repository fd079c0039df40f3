"""Chance-constrained neural MPC with conformal error bounds and two-loop SCP."""

__version__ = "0.1.0"
