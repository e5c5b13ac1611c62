"""Numerical laboratory for small-perturbation regularity of fully nonlinear parabolic equations."""

__version__ = "0.1.0"
