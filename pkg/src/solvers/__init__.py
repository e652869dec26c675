"""Deterministic and stochastic time steppers."""
