"""Multistage robust unit commitment with inner/outer cost-to-go approximations."""

__version__ = "0.1.0"
