"""Modular self-organization of state-aggregation planners."""

__version__ = "0.1.0"
