"""Gaussian splatting with score distillation, structured view noise and variational splats."""

__version__ = "0.1.0"
