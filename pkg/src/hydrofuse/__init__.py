"""Hydraulic state estimation and leak localization for water distribution networks."""

__version__ = "0.1.0"
