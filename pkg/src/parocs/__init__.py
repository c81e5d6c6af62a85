"""Semilinear parabolic optimal control with bang-bang structure: solvers and stability experiments."""

__version__ = "0.1.0"
