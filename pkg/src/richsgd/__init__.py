"""Richardson-extrapolated SGD for learning from incomplete data."""

__version__ = "0.1.0"
