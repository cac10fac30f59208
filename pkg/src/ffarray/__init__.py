"""Pulse-level simulation of small flip-flop qubit arrays under 1/f charge noise."""

__version__ = "0.1.0"
