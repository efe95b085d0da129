"""Multiscale superpixel graphs with center-difference graph convolution and tree fusion."""

__version__ = "0.1.0"
