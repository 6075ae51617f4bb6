"""Tail-index bounds for SGD on ridge regression."""
__version__ = "0.1.0"
