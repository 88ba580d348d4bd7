"""Optimal control of linearized compressible Navier-Stokes flow around a given base state."""
__version__ = "0.1.0"
