"""Training objectives: overlap loss, topology (centerline-overlap) loss,
the prediction-disagreement mask, masked consistency loss, the warmup
schedule for the consistency weight, and the composite of all three.

All functions accept tensors shaped (D, H, W) or with extra leading batch
dims; reductions are per-sample over the last three axes, then averaged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .grid import ShapeError
from .skeleton import skeletonize_array
from .skeleton.soft import soft_skeleton

_SPATIAL = (-3, -2, -1)


@dataclass(frozen=True)
class LossWeights:
    """Composite-loss weighting state at one training step.

    ``alpha`` trades overlap against topology preservation; the
    consistency term ramps from ``beta_max * exp(-5)`` at t=0 up to
    ``beta_max`` at t=t_max.
    """

    alpha: float
    t: int
    t_max: int
    beta_max: float = 0.1
    epsilon: float = 1e-5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.t_max < 1:
            raise ValueError(f"t_max must be >= 1, got {self.t_max}")
        if not 0 <= self.t <= self.t_max:
            raise ValueError(f"t={self.t} outside [0, {self.t_max}]")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")


@dataclass(frozen=True)
class StreamOutputs:
    """Paired per-voxel probability maps from the two streams for a block.

    ``prob_2d`` is None when training the 3D stream alone (ablations)."""

    prob_3d: torch.Tensor
    prob_2d: torch.Tensor | None = None


def _check_same_shape(*tensors) -> None:
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ShapeError(f"tensor shapes differ: {tuple(t.shape)} vs {tuple(shape)}")


def dice_loss(p: torch.Tensor, y: torch.Tensor, epsilon: float = 1e-5) -> torch.Tensor:
    """1 - smoothed overlap ratio; 0 at perfect prediction, in [0, 1)."""
    _check_same_shape(p, y)
    inter = (p * y).sum(dim=_SPATIAL)
    denom = p.sum(dim=_SPATIAL) + y.sum(dim=_SPATIAL)
    return (1.0 - (2.0 * inter + epsilon) / (denom + epsilon)).mean()


def soft_cldice_loss(
    p: torch.Tensor,
    y: torch.Tensor,
    iterations: int = 10,
    epsilon: float = 1e-5,
    label_skeleton: torch.Tensor | None = None,
) -> torch.Tensor:
    """1 - harmonic mean of soft centerline precision and sensitivity.

    The prediction skeleton is the differentiable soft skeleton; the label
    skeleton is exact hard thinning (constant w.r.t. the prediction) and
    may be passed precomputed via ``label_skeleton``.
    """
    _check_same_shape(p, y)
    if label_skeleton is None:
        label_skeleton = hard_label_skeleton(y)
    else:
        _check_same_shape(y, label_skeleton)
    skel_p = soft_skeleton(p, iterations)
    tprec = ((skel_p * y).sum(dim=_SPATIAL) + epsilon) / (skel_p.sum(dim=_SPATIAL) + epsilon)
    tsens = ((label_skeleton * p).sum(dim=_SPATIAL) + epsilon) / (
        label_skeleton.sum(dim=_SPATIAL) + epsilon
    )
    cl = 2.0 * tprec * tsens / (tprec + tsens)
    return (1.0 - cl).mean()


def hard_label_skeleton(y: torch.Tensor) -> torch.Tensor:
    """Exact thinning of a (possibly batched) binary label tensor."""
    arr = y.detach().cpu().numpy()
    flat = arr.reshape((-1,) + arr.shape[-3:])
    out = np.stack([skeletonize_array(np.round(a).astype(np.uint8)) for a in flat])
    return torch.from_numpy(out.reshape(arr.shape).astype(arr.dtype))


def uncertainty_mask(
    prob_a: torch.Tensor, prob_b: torch.Tensor, threshold: float = 0.5
) -> torch.Tensor:
    """Voxels where the two binarized predictions disagree (XOR).

    The mask is a gradient constant: no gradient flows through it.
    """
    _check_same_shape(prob_a, prob_b)
    with torch.no_grad():
        mask = (prob_a > threshold) ^ (prob_b > threshold)
    return mask.to(prob_a.dtype)


def consistency_loss(
    prob_2d: torch.Tensor,
    prob_3d: torch.Tensor,
    y: torch.Tensor,
    m: torch.Tensor,
) -> torch.Tensor:
    """Mean squared error of each stream against the label, restricted to
    the disagreement mask and averaged over the two streams.

    Defined as exactly 0 for an empty mask.
    """
    _check_same_shape(prob_2d, prob_3d, y, m)
    msum = m.sum(dim=_SPATIAL)
    se2 = (m * (prob_2d - y) ** 2).sum(dim=_SPATIAL)
    se3 = (m * (prob_3d - y) ** 2).sum(dim=_SPATIAL)
    denom = msum.clamp(min=1.0)
    per_sample = torch.where(
        msum > 0, (se2 / denom + se3 / denom) / 2.0, torch.zeros_like(msum)
    )
    return per_sample.mean()


def beta_schedule(t: int, t_max: int, beta_max: float = 0.1) -> float:
    """Gaussian warmup of the consistency weight over iterations.

    Monotone nondecreasing; exactly ``beta_max * exp(-5)`` at t=0 and
    exactly ``beta_max`` at t=t_max.
    """
    if t_max <= 0:
        raise ValueError(f"t_max must be > 0, got {t_max}")
    if not 0 <= t <= t_max:
        raise ValueError(f"t={t} outside [0, {t_max}]")
    return beta_max * math.exp(-5.0 * (1.0 - t / t_max) ** 2)


def total_loss(
    outputs: StreamOutputs,
    y: torch.Tensor,
    weights: LossWeights,
    skeleton_iterations: int = 10,
    label_skeleton: torch.Tensor | None = None,
    threshold: float = 0.5,
) -> tuple[torch.Tensor, dict]:
    """Composite objective
    ``(1-alpha) * dice_term + alpha * cldice_term + beta(t) * consistency``.

    The overlap and topology terms are computed per stream and averaged
    over the available streams, so both streams receive full supervision.
    The topology term is skipped (reported as 0) when alpha == 0. Returns
    the scalar plus a breakdown dict whose weighted recombination equals
    the scalar.
    """
    probs = [outputs.prob_3d]
    if outputs.prob_2d is not None:
        probs.append(outputs.prob_2d)
    eps = weights.epsilon
    dice_term = sum(dice_loss(p, y, eps) for p in probs) / len(probs)
    if weights.alpha > 0.0:
        if label_skeleton is None:
            label_skeleton = hard_label_skeleton(y)
        cldice_term = sum(
            soft_cldice_loss(p, y, skeleton_iterations, eps, label_skeleton)
            for p in probs
        ) / len(probs)
    else:
        cldice_term = torch.zeros((), dtype=y.dtype)
    beta = beta_schedule(weights.t, weights.t_max, weights.beta_max)
    if outputs.prob_2d is not None:
        m = uncertainty_mask(outputs.prob_3d, outputs.prob_2d, threshold)
        consistency_term = consistency_loss(outputs.prob_2d, outputs.prob_3d, y, m)
        mask_voxels = int(m.sum().item())
    else:
        consistency_term = torch.zeros((), dtype=y.dtype)
        mask_voxels = 0
    total = (
        (1.0 - weights.alpha) * dice_term
        + weights.alpha * cldice_term
        + beta * consistency_term
    )
    breakdown = {
        "dice_term": float(dice_term.item()),
        "cldice_term": float(cldice_term.item()),
        "consistency_term": float(consistency_term.item()),
        "beta": beta,
        "mask_voxels": mask_voxels,
    }
    return total, breakdown
