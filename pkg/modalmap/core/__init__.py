"""Losses, training loop and experiment orchestration."""
