"""In-ear BCG to SCG processing pipeline on synthetic IMU streams."""

__version__ = "0.1.0"
