"""Numerical toolkit for parabolic uniform rectifiability and big pieces of
Lip(1,1/2) graphs."""

__version__ = "0.1.0"
