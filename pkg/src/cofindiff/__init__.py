"""Controllable financial time-series generation with a conditional diffusion model."""

__version__ = "0.1.0"
