"""Frequency-based learning to rank over six-dimension personal data traces."""

from .core import Dataset, Dimension, QueryObject, TraceObject, matches

__all__ = ["Dataset", "Dimension", "QueryObject", "TraceObject", "matches"]
__version__ = "0.1.0"
