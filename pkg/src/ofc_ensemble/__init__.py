"""Ensemble-learning toolkit for binary outcome prediction on clinical tables."""

__version__ = "0.1.0"
