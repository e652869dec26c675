"""Scenario files, validation and the batch runner."""
