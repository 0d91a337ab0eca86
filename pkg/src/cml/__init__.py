"""Coupled map lattice with a Toom-like phase transition."""

__version__ = "0.1.0"
