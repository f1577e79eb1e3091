"""Simulation and post-processing for an OAM mode-crosstalk quantum random number generator."""

__version__ = "0.1.0"
