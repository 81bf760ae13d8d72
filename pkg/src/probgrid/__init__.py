"""Probabilistic gridded products of seasonal extreme precipitation from station data."""

__version__ = "0.1.0"
