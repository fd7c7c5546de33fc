"""Confounder-controlled embeddings (PCA, HCP, METCC) with a cross-validation harness."""

from ._core import *  # noqa: F401,F403
from ._core import MetccError

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
