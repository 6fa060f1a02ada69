"""Adaptive kernel density estimation with joint bandwidth and independence-structure selection."""

__version__ = "0.1.0"
