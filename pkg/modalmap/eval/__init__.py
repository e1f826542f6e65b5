"""Reconstruction metrics, identification and image grids."""
