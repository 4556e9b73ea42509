"""Noise-aware simulation of amplitude-encoded quantum neural networks."""

__version__ = "0.1.0"
