"""Conditional principal causal effects under principal ignorability."""
__version__ = "0.1.0"
