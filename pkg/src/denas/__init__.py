"""Coarse-to-fine differentiable architecture search for image denoising."""

__version__ = "0.1.0"
