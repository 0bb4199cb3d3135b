"""Skeleton extraction in two regimes.

``hard_skeletonize`` is the exact, topology-preserving thinning used by
the evaluation metrics; ``soft_skeleton``/``soft_skeletonize`` is the
differentiable morphological surrogate used inside the training loss.

The thinning inner loop ships as a compiled extension with a pure-Python
fallback selected here at import time; set ``UADSN_PURE_PYTHON=1`` to
force the fallback (the two kernels produce identical output).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import torch

from ..grid import BinaryMask, Volume
from .soft import soft_skeleton

if os.environ.get("UADSN_PURE_PYTHON", "0") == "1":
    from . import _thinning_py as _kernel
else:
    try:
        from . import _thinning as _kernel  # type: ignore[no-redef]
    except ImportError:
        from . import _thinning_py as _kernel  # type: ignore[no-redef]

COMPILED_KERNEL: bool = bool(_kernel.COMPILED)


@dataclass(frozen=True)
class SoftSkeletonConfig:
    """Iteration budget for the soft skeleton (covers tubes of radius
    up to roughly ``iterations`` voxels)."""

    iterations: int = 10

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")


def skeletonize_array(mask: np.ndarray) -> np.ndarray:
    """Hard-thin a {0,1} array; returns a new uint8 array."""
    arr = np.array(mask, dtype=np.uint8, order="C")
    _kernel.thin(arr)
    return arr


def hard_skeletonize(m: BinaryMask) -> BinaryMask:
    """Topology-preserving medial-axis thinning of a binary mask.

    The output is a subset of the input with the same 26-connected
    foreground and 6-connected background component structure; curve
    endpoints are preserved and re-thinning is a no-op.
    """
    return BinaryMask(skeletonize_array(m.data), m.spacing)


def soft_skeletonize(p: Volume, cfg: SoftSkeletonConfig) -> Volume:
    """Soft skeleton of a probability volume (non-autograd convenience)."""
    if not p.is_probability():
        raise ValueError("soft_skeletonize expects values in [0, 1]")
    with torch.no_grad():
        t = torch.from_numpy(np.array(p.data))
        out = soft_skeleton(t, cfg.iterations)
    return Volume(out.numpy(), p.spacing)


__all__ = [
    "COMPILED_KERNEL",
    "SoftSkeletonConfig",
    "hard_skeletonize",
    "skeletonize_array",
    "soft_skeleton",
    "soft_skeletonize",
]
