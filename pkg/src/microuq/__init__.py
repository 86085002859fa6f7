"""Uncertainty quantification for FFT-homogenized voxel composites."""

__version__ = "0.1.0"
