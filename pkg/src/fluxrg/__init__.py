"""Finite-size verification toolkit for half-filled multi-band lattice fermions with flux."""

__version__ = "0.1.0"
