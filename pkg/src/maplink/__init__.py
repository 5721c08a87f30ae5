"""Reading-order text linking for map word annotations."""

__version__ = "0.1.0"
