"""Unsupervised acoustic-event detection by clustering learned latent transitions."""

__version__ = "0.1.0"
