"""Numerical companion for gradient blow-up between nearly touching insulators."""

__version__ = "0.1.0"
