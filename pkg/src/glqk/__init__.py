"""Geometrically local quantum kernels on classical shadows."""

__version__ = "0.1.0"
