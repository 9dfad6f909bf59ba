"""Simulation and security bounds for no-signalling secure one-bit key distribution."""

__version__ = "0.1.0"
