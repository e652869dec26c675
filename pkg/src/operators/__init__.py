"""Maximal monotone operators defined through their resolvents."""
