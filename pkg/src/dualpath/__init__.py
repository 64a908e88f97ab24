"""Dual-pathway multimodal fusion with conflict-aware gating.

A desk-scale, gradient-verified implementation: three synthetic input
modalities are decoupled into shared and private subspaces, fused through
an intuition pathway (cross-modal consensus) and a reasoning pathway
(reliability-weighted private features), with a learned gate that shifts
weight toward reasoning when the modalities disagree.
"""

from dualpath.tensor import Tensor
from dualpath.rng import Rng

__all__ = ["Tensor", "Rng"]
__version__ = "0.1.0"
