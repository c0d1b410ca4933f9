"""Cube files, PGM export, noise and synthetic data."""
