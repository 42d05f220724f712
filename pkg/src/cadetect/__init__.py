"""Conditional anomaly detection over binary case records."""

__version__ = "0.1.0"
