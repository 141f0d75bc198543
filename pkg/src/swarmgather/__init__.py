"""Simulation-and-learning toolkit that discovers collision-less gathering
and mutual-visibility patterns for swarms of fat opaque robots."""

__version__ = "0.1.0"
