"""Adaptive click/line annotation engine for interactive segmentation."""

__version__ = "0.1.0"
