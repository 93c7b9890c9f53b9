"""Offline equilibrium finding on small imperfect-information games."""

__version__ = "0.1.0"
