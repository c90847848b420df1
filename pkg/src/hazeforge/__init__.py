"""Concentration-partitioned multi-branch image dehazing."""
__version__ = "0.1.0"
