"""Differentiable soft skeletonization by iterated soft morphology.

Soft erosion is the voxelwise minimum over the 6-neighbourhood (negated
max-pooling per axis); soft opening is erosion followed by a 3x3x3 soft
dilation. The skeleton accumulates the opening residue at every erosion
scale, gated so the result stays in [0, 1].
"""

from __future__ import annotations

import torch
import torch.nn.functional as F


def _soft_erode(t: torch.Tensor) -> torch.Tensor:
    p1 = -F.max_pool3d(-t, (3, 1, 1), (1, 1, 1), (1, 0, 0))
    p2 = -F.max_pool3d(-t, (1, 3, 1), (1, 1, 1), (0, 1, 0))
    p3 = -F.max_pool3d(-t, (1, 1, 3), (1, 1, 1), (0, 0, 1))
    return torch.min(torch.min(p1, p2), p3)


def _soft_dilate(t: torch.Tensor) -> torch.Tensor:
    return F.max_pool3d(t, (3, 3, 3), (1, 1, 1), (1, 1, 1))


def _soft_open(t: torch.Tensor) -> torch.Tensor:
    return _soft_dilate(_soft_erode(t))


def soft_skeleton(probs: torch.Tensor, iterations: int) -> torch.Tensor:
    """Soft skeleton of a probability tensor, differentiable in the input.

    Accepts (D, H, W), (B, D, H, W) or (B, C, D, H, W) tensors and returns
    the same shape. ``iterations`` bounds the radius of structures that are
    fully eroded into the skeleton.
    """
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    squeeze = 0
    t = probs
    while t.dim() < 5:
        t = t.unsqueeze(0)
        squeeze += 1
    img = t
    skel = F.relu(img - _soft_open(img))
    for _ in range(iterations):
        img = _soft_erode(img)
        skel = skel + F.relu(img - _soft_open(img)) * (1.0 - skel)
    for _ in range(squeeze):
        skel = skel.squeeze(0)
    return skel
