"""Local sentiment aggregation for aspect-based sentiment classification."""

__version__ = "0.1.0"
