"""Homomorphic self-supervised learning on finite groups, at desk scale."""

__version__ = "0.1.0"
