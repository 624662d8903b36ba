"""Multi-frequency neural network for series arc-fault diagnosis."""

__version__ = "0.1.0"
