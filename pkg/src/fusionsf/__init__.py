"""Trimodal (power series, satellite context, NWP) day-ahead solar power forecasting."""

__version__ = "0.1.0"
