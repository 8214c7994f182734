"""Invariant curves of reversible almost periodic twist maps."""

__version__ = "0.1.0"
