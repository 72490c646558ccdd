"""Carleman-weight laboratory for the radiative transport equation."""

__version__ = "0.1.0"
