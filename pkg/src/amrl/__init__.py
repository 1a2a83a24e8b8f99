"""Actor-critic agents with opponent/teammate modeling (A3C, AMS-A3C, AMF-A3C)."""

__version__ = "0.1.0"
