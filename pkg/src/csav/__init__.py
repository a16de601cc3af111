"""Auxiliary-variable time integrators for phase-field gradient flows on periodic grids."""

__version__ = "0.1.0"
