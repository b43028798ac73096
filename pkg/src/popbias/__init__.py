"""Popularity-bias diagnosis toolkit for user-based KNN recommenders."""

__version__ = "0.1.0"
