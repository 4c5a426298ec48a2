"""Calibrated Bayesian decision sets for localized-signal searches in binned spectra."""

__version__ = "0.1.0"
