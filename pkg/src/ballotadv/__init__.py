"""Adversarial ballot-classifier attacks and election-flipping analysis."""

__version__ = "0.1.0"
