"""Plotting helpers for solution paths, decay curves, empirical laws and convergence tables."""
