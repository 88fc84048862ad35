"""Transition density of the generalized Shiryaev–Roberts diffusion."""

__version__ = "0.1.0"
