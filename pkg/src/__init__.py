"""Monotone inclusion toolkit: resolvent calculus, Skorokhod-type solvers and stochastic diagnostics."""

__version__ = "0.1.0"
