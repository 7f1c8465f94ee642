"""Neural regression that predicts a Gaussian (mean and standard deviation) per input."""

__version__ = "0.1.0"
