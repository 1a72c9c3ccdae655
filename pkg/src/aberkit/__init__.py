"""aberkit: spatially varying lens-blur simulation, adaptive Wiener filter
banks, and a toy attention-based restoration network, all on a small
self-contained tensor engine."""

from .tensor import Tensor

__all__ = ["Tensor"]
__version__ = "0.1.0"
