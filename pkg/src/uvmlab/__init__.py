"""Desk-scale laboratory for learned GPU unified-memory page prefetching."""

__version__ = "0.1.0"
