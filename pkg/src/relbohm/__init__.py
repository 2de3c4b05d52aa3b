"""Relativistic Bohmian trajectories in quantum proper time."""

__version__ = "0.1.0"
