"""Online signature verification with two simulated Tablet PCs."""

__version__ = "0.1.0"
