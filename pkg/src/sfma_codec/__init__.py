"""Learned image codec with spatial-frequency modulation adapters."""

__version__ = "0.1.0"
