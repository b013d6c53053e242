"""Canonical Gibbs point processes on periodic windows and their finite-n large deviations."""

__version__ = "0.1.0"
