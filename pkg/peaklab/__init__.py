"""Anticipation/response peak modeling for hourly attention time series."""

__version__ = "0.3.0"
