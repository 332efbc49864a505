"""accentdet: word-level pitch accent detection from speech and text."""

__version__ = "0.1.0"
