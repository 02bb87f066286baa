"""Desk-scale toolkit for French BART-style denoising pretraining and summarization."""

__version__ = "0.1.0"
