"""Invariant-likelihood estimation for the fixed-effects dynamic panel AR(1) model."""

__version__ = "0.1.0"
