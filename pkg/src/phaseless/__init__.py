"""Phaseless inverse scattering with known background potentials."""

__version__ = "0.1.0"
