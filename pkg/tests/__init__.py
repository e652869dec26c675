"""Test suite for the monotone inclusion toolkit."""
