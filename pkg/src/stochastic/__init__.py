"""Wiener processes, stochastic integrals and martingale diagnostics."""
