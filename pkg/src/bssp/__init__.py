"""Balance-subsampled stable prediction on binary features."""

__version__ = "0.1.0"
