"""Topological Cucker-Smale flocking: simulation and mean-field verification."""

__version__ = "0.1.0"
