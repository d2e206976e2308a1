"""Sketch-driven 3D face and caricature modeling toolkit."""

__version__ = "0.1.0"
