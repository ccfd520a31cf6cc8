"""Privacy-preserving location sharing over an honest-but-curious relay."""

__version__ = "0.1.0"
