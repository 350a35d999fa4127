"""Unsupervised domain adaptation by training self-supervised heads on both domains."""

__version__ = "0.1.0"
