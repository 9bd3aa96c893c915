"""Diffusion-based user/expert matching for RSMA downlinks."""

__version__ = "0.1.0"
