"""Rotations of finite-dimensional Gaussian space and their calculus of variations."""

__version__ = "0.1.0"
