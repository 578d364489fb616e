"""Numerical toolkit for convexity along cones of directions."""

__version__ = "0.1.0"
