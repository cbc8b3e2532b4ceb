"""Bounded verification workbench for state-based replicated objects."""

__version__ = "0.1.0"
