"""Pseudospectral laboratory for the analyticity radius of semi-linear parabolic systems."""

__version__ = "0.1.0"
