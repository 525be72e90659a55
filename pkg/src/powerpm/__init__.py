"""Hierarchical electricity time-series pre-training and task harness."""

__version__ = "0.1.0"
