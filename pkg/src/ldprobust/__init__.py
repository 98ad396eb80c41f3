"""Locally private, contamination-robust testing and estimation."""

__version__ = "0.1.0"
