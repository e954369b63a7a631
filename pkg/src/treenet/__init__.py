"""Deterministic simulator and protocol stack for self-organizing tree Wi-Fi networks."""

__version__ = "0.1.0"
