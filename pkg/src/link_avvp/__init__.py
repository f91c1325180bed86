"""Desk-scale weakly-supervised audio-visual video parsing with adaptive modality interaction."""

__version__ = "0.1.0"
