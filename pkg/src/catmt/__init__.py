"""Category-aware phrase-based translation of short product titles."""

__version__ = "0.1.0"
