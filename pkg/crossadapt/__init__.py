"""crossadapt: two-stage knowledge transfer for user-response prediction models."""

__version__ = "0.1.0"
