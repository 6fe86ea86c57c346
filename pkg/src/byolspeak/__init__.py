"""Self-supervised speaker embeddings with bootstrap training on augmented audio views."""

__version__ = "0.1.0"
