"""Dataset manifests, splits, image ingestion and synthetic data."""
