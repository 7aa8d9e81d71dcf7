"""Difficulty classification of symbolic piano scores from fingering features."""

__version__ = "0.1.0"
