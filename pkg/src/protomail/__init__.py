"""Interpretable email response prediction with multi-granularity prototypes."""

__version__ = "0.1.0"
