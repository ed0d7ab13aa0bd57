"""Spherical-piston CSM simulation and a complex-valued GAN that filters CSMs."""

__version__ = "0.1.0"
