"""modalmap - paired cross-modal (ear to face) image mapping and evaluation."""

__version__ = "0.1.0"
