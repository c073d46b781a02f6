"""Distributed multi-speaker voice activity detection for wireless
acoustic sensor networks.

The package covers the full chain: scene synthesis, per-bin network
covariance, distributed eigendecomposition, source-count enumeration,
node clustering, energy unmixing, and the final activity detector, plus
a staged CLI pipeline tying them together.
"""

from ._kernels import HAVE_EXT

__all__ = ["HAVE_EXT"]
__version__ = "0.1.0"
