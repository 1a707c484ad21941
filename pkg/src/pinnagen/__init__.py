"""Synthetic ear shapes and pinna-related transfer functions from a PCA shape model."""

__version__ = "0.1.0"
