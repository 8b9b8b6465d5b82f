"""Multiplicative asset exchange: simulation, kinetic theory and exponent analysis."""
__version__ = "0.1.0"
