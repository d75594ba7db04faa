"""Lock-in NV magnetometer simulator with PI resonance tracking."""

__version__ = "0.1.0"
