"""Optimal spatial and network allocation of a finite resource against random events."""

__version__ = "0.1.0"
