"""Numerical laboratory for Ricci-type flows coupled to a scalar field."""

__version__ = "0.1.0"
