"""sensorforge: author, run, test, and debug personalized visual AI sensors."""

__version__ = "0.1.0"
