"""Grasp synthesis toolkit: latent diffusion over a procedural hand model."""

__version__ = "0.1.0"
