"""Invariant graphs of forced oscillators and the synchronisation analysis built on them."""
__version__ = "0.1.0"
