"""Transformer with window-masked, center-controlled attention for synchronous motion captioning."""

__version__ = "0.1.0"
