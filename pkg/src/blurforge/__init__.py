"""Paired blurry/sharp dataset synthesis from Gaussian splatting scenes."""

__version__ = "0.1.0"
