"""Finite element continuous data assimilation (nudging) for evolution equations."""

__version__ = "0.1.0"
