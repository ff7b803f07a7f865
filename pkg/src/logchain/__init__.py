"""Hierarchical tamper-evident log storage with simulated blockchain anchoring."""

__version__ = "0.1.0"
