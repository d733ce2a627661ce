"""Numerical laboratory for the Navier-Stokes/Allen-Cahn diffuse-interface model
and its sharp-interface limit."""

__version__ = "0.1.0"
