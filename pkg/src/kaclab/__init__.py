"""Numerical laboratory for Kac-Kawasaki fluctuation dynamics and their Cahn-Hilliard limit."""

__version__ = "0.1.0"
