"""Symplectic positional embeddings and the StretchTime forecaster."""

__version__ = "0.1.0"
