"""Finite-dimensional Hilbert spaces, time grids and paths."""
