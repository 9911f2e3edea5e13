"""Two-stage shear-wave-elastography reconstruction pipeline."""

__version__ = "0.1.0"
