"""Consistency training for cross-lingual sequence tagging with a small numpy tagger."""

__version__ = "0.1.0"
