"""Open planar disc billiards: dynamics, periodic orbits, resonances."""

__version__ = "0.1.0"
