"""Secure cache-enabled cooperative delivery: training, delivery and evaluation."""

__version__ = "0.1.0"
