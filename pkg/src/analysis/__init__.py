"""Analysis utilities for estimators, sweeps and large-time behaviour."""
