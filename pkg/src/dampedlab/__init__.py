"""Numerical laboratory for damped wave equations on R^d."""

__version__ = "0.1.0"
