"""Trainable, traceable attention modules executing reasoning programs over scene graphs."""

__version__ = "0.1.0"
