"""Busy periods of polling systems in a random environment, via branching processes."""

__version__ = "0.1.0"
