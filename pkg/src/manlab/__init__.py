"""Multi-target adversarial network lab."""

__version__ = "0.1.0"
