"""Marginal-analysis ordering policies for perishable inventory."""

__version__ = "0.1.0"
