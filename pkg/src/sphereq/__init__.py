"""Rotation-based vector quantization."""
