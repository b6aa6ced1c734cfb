"""Cross-correlated physics-informed neural network for 2D TM inverse scattering."""

__version__ = "0.1.0"
