"""Numerical laboratory for configuration counts in dense subsets of the unit cube."""

__version__ = "0.1.0"
