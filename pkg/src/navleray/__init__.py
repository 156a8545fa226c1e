"""Constructive Leray-form Navier-Stokes time stepping with control functions."""

__version__ = "0.1.0"
