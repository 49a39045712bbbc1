"""Coded LED link simulator with polynomial and ELM post-distortion receivers."""

__version__ = "0.1.0"
