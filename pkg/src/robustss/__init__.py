"""Robust utility maximization with semi-static trading on finite path spaces."""

__version__ = "0.1.0"
