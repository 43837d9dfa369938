"""Certified asymptotic key rates for unbalanced phase-encoded BB84."""

__version__ = "0.1.0"
