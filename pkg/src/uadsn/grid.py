"""Voxel-grid containers and binary mask algebra.

Arrays are indexed ``(depth, height, width)`` = ``(Z, Y, X)``; spacing is
``(sz, sy, sx)`` in millimetres per voxel. All containers are immutable
after construction and all operations are pure functions.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

AXIS_NAMES = ("depth", "height", "width")


class ShapeError(ValueError):
    """Shapes, spacings or channel counts violate an operation's contract."""


class BoundsError(ValueError):
    """A crop window falls outside the parent grid."""


class Connectivity(enum.IntEnum):
    """Neighbour relation on the 3D voxel lattice (6, 18 or 26 neighbours)."""

    FACES = 6
    FACES_EDGES = 18
    FACES_EDGES_CORNERS = 26

    @property
    def structure(self) -> np.ndarray:
        """Boolean 3x3x3 structuring element for scipy.ndimage."""
        rank = {6: 1, 18: 2, 26: 3}[int(self)]
        return ndimage.generate_binary_structure(3, rank)


def _check_spacing(spacing) -> tuple[float, float, float]:
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3:
        raise ShapeError(f"spacing must have 3 components, got {len(spacing)}")
    if any(s <= 0 for s in spacing):
        raise ValueError(f"spacing components must be > 0, got {spacing}")
    return spacing


@dataclass(frozen=True)
class Volume:
    """A 3D scalar grid (intensities, probabilities or feature values).

    Attributes:
        data: float32 array of shape (D, H, W).
        spacing: (sz, sy, sx) physical voxel size in mm.
    """

    data: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ShapeError(f"volume data must be 3D, got ndim={data.ndim}")
        if min(data.shape) < 1:
            raise ShapeError(f"every axis must have extent >= 1, got {data.shape}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def is_probability(self) -> bool:
        """True when every value lies in [0, 1]."""
        return bool(self.data.min() >= 0.0 and self.data.max() <= 1.0)


@dataclass(frozen=True)
class BinaryMask:
    """A {0,1}-valued grid aligned to a Volume (labels, masks, skeletons)."""

    data: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        raw = np.asarray(self.data)
        if raw.ndim != 3:
            raise ShapeError(f"mask data must be 3D, got ndim={raw.ndim}")
        if raw.dtype != bool and not np.isin(raw, (0, 1)).all():
            raise ValueError("mask values must all be 0 or 1")
        data = np.array(raw, dtype=np.uint8)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def count(self) -> int:
        """Number of foreground voxels."""
        return int(self.data.sum())


def _require_same_grid(a, b) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"grid shapes differ: {a.shape} vs {b.shape}")
    if a.spacing != b.spacing:
        raise ShapeError(f"grid spacings differ: {a.spacing} vs {b.spacing}")


def binarize(v: Volume, threshold: float = 0.5) -> BinaryMask:
    """Threshold a probability volume: voxel -> 1 iff value > threshold.

    Strictly-greater comparison, so a voxel exactly at the threshold maps
    to background.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    if not v.is_probability():
        raise ValueError("binarize expects a probability volume with values in [0, 1]")
    return BinaryMask(v.data > threshold, v.spacing)


def connected_components(
    m: BinaryMask, connectivity: Connectivity = Connectivity.FACES_EDGES_CORNERS
) -> tuple[np.ndarray, np.ndarray]:
    """Label foreground components under the given connectivity.

    Returns:
        (labels, sizes): labels is an int32 map with background 0 and
        components numbered 1..n in scan order; sizes[k] is the voxel count
        of component k+1.
    """
    structure = Connectivity(connectivity).structure
    labels, n = ndimage.label(m.data, structure=structure)
    sizes = np.bincount(labels.ravel(), minlength=n + 1)[1:]
    return labels.astype(np.int32), sizes


def largest_component(
    m: BinaryMask, connectivity: Connectivity = Connectivity.FACES_EDGES_CORNERS
) -> BinaryMask:
    """Keep only one maximum-size foreground component (empty in -> empty out).

    Ties break deterministically toward the component labelled first in
    scan order.
    """
    labels, sizes = connected_components(m, connectivity)
    if sizes.size == 0:
        return m
    keep = int(np.argmax(sizes)) + 1
    return BinaryMask(labels == keep, m.spacing)


def surface_voxels(m: BinaryMask) -> BinaryMask:
    """Foreground voxels with at least one 6-neighbour outside the foreground.

    Neighbours beyond the grid boundary count as background, so voxels on
    the grid faces are always surface.
    """
    fg = m.data.astype(bool)
    p = np.pad(fg, 1, constant_values=False)
    interior = (
        p[2:, 1:-1, 1:-1] & p[:-2, 1:-1, 1:-1]
        & p[1:-1, 2:, 1:-1] & p[1:-1, :-2, 1:-1]
        & p[1:-1, 1:-1, 2:] & p[1:-1, 1:-1, :-2]
    )
    return BinaryMask(fg & ~interior, m.spacing)


def crop_block(v, origin: tuple[int, int, int], size: tuple[int, int, int]):
    """Extract the axis-aligned block ``v[origin : origin + size]``.

    Works on Volume and BinaryMask alike and preserves the input type and
    spacing. Raises BoundsError naming the violating axis when the window
    does not fit.
    """
    if len(origin) != 3 or len(size) != 3:
        raise ShapeError("origin and size must each have 3 components")
    for axis, (o, s, extent) in enumerate(zip(origin, size, v.shape)):
        if s < 1:
            raise BoundsError(f"block size along {AXIS_NAMES[axis]} must be >= 1, got {s}")
        if o < 0 or o + s > extent:
            raise BoundsError(
                f"block [{o}, {o + s}) exceeds {AXIS_NAMES[axis]} extent {extent}"
            )
    d, h, w = origin
    sd, sh, sw = size
    data = v.data[d:d + sd, h:h + sh, w:w + sw]
    return type(v)(data, v.spacing)
