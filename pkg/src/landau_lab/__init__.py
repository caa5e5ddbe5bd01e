"""Numerical laboratory for the space-homogeneous Landau-Coulomb equation."""

__version__ = "0.1.0"
