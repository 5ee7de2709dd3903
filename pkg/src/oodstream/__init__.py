"""Streaming out-of-distribution detection over precomputed embeddings."""

__version__ = "0.1.0"

from .core import RunConfig

__all__ = ["RunConfig", "__version__"]
