"""Discrete-event simulator for purify-and-swap quantum repeater networks."""

__version__ = "0.1.0"
