"""Cross-enhancement transformer for temporal action segmentation, on numpy."""

__version__ = "0.1.0"
