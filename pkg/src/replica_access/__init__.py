"""Replica-method predictions and AMP simulation for grouped massive random access."""

__version__ = "0.1.0"
