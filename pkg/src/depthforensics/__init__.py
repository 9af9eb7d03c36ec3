"""Depth-assisted detection of face manipulation in frame sequences."""

__version__ = "0.1.0"
