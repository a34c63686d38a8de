"""Numerical laboratory for ground states of a discrete NLS with a septic nonlinearity."""

__version__ = "0.1.0"
