"""Perturbation theory and Monte Carlo for random 2x2 transfer matrices near a critical point."""

__version__ = "0.1.0"
