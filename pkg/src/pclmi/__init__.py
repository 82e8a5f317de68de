"""Polynomial-chaos LMI analysis and control of uncertain linear systems."""

__version__ = "0.1.0"
