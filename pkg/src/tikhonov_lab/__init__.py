"""Tikhonov regularization laboratory for bang-bang optimal control."""

__version__ = "1.0.0"
