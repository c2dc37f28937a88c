"""Calibrated parameter-efficient active learning on embedding datasets."""

__version__ = "0.1.0"
