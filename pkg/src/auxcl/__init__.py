"""Label-free class-incremental learning over precomputed embedding bundles."""

__version__ = "0.1.0"
