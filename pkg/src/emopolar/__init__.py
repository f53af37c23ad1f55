"""Polarity-enhanced attention for emotion classification, at desk scale."""

__version__ = "0.1.0"
