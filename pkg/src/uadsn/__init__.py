"""Uncertainty-aware dual-stream segmentation of thin tubular structures."""

from .grid import BinaryMask, Connectivity, Volume

__version__ = "0.1.0"

__all__ = ["BinaryMask", "Connectivity", "Volume", "__version__"]
