"""Training-free redundancy analysis for decoder-only multimodal transformers."""

from redundancy_lens.__version__ import __version__

__all__ = ["__version__"]
