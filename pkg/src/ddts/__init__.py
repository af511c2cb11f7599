"""Declarative, dependency-driven system testing for scientific software."""

__version__ = "0.1.0"
