"""Head-pose-supervised initialization for cascaded face alignment."""

__version__ = "0.1.0"
