"""Embedding export into the bundle directory format."""

__version__ = "0.1.0"
