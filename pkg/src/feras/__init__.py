"""Federated graph convolutional networks with shared node embeddings."""

__version__ = "0.1.0"
