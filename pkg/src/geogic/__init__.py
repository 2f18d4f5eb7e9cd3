"""Generalized information criterion selection for geostatistical regression."""

__version__ = "0.1.0"
