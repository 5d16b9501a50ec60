"""Causal optimal transport on scenario trees."""
__version__ = "0.1.0"
