"""Rough-path large deviations for mean-field interacting diffusions."""

__version__ = "0.1.0"
