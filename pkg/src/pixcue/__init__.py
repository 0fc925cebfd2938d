"""Joint MRI reconstruction and per-pixel uncertainty by pixel classification."""

__version__ = "0.1.0"
