"""Adapter that feeds quadprior job manifests to a pretrained
boundary-conditioned diffusion model (or a stub for testing)."""

__version__ = "0.1.0"
