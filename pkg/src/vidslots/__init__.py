"""Recurrent slot-based video object discovery with slot-feature query prediction."""
from .core import ConfigError, RunConfig, make_rng

__version__ = "0.1.0"
__all__ = ["ConfigError", "RunConfig", "make_rng", "__version__"]
