"""Self-supervised masked pre-training for multivariate temporal point processes."""

__version__ = "0.1.0"
