"""Ranking-regularized training of small classifiers, with confidence and OOD evaluation."""

__version__ = "0.1.0"
