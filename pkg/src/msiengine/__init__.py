"""Deterministic engine for multisensory-integration study protocols."""

__version__ = "0.1.0"
