"""Numerical laboratory for Beltrami fields curl u = f u with symmetric factors."""
__version__ = "0.1.0"
