"""Tabular laboratory for shaped sub-trajectory-balance fine-tuning of perceptual flows."""

__version__ = "0.1.0"
