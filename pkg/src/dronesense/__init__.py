"""Drone RF-spectrum attack sensing engine and deterministic scenario simulator."""

__version__ = "0.1.0"
