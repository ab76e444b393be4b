"""Directed message passing neural networks for molecular property prediction."""

__version__ = "0.1.0"
