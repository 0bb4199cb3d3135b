"""Independent oracles and small mask builders shared by the test suite.

Everything here is deliberately brute force (union-find, all-pairs
distances, naive neighbour scans) so it exercises none of the package's
own fast paths.
"""

from __future__ import annotations

import itertools

import numpy as np

from uadsn.grid import BinaryMask


def neighbours(connectivity: int):
    offs = []
    for dz, dy, dx in itertools.product((-1, 0, 1), repeat=3):
        if (dz, dy, dx) == (0, 0, 0):
            continue
        manhattan = abs(dz) + abs(dy) + abs(dx)
        if connectivity == 6 and manhattan != 1:
            continue
        if connectivity == 18 and manhattan > 2:
            continue
        offs.append((dz, dy, dx))
    return offs


def union_find_components(mask: np.ndarray, connectivity: int):
    """Brute-force component partition: list of frozensets of coordinates."""
    coords = [tuple(c) for c in np.argwhere(mask)]
    parent = {c: c for c in coords}

    def find(c):
        while parent[c] != c:
            parent[c] = parent[parent[c]]
            c = parent[c]
        return c

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb

    coord_set = set(coords)
    for c in coords:
        for dz, dy, dx in neighbours(connectivity):
            n = (c[0] + dz, c[1] + dy, c[2] + dx)
            if n in coord_set:
                union(c, n)
    groups: dict = {}
    for c in coords:
        groups.setdefault(find(c), set()).add(c)
    return [frozenset(g) for g in groups.values()]


def brute_surface(mask: np.ndarray) -> np.ndarray:
    """Naive 6-neighbour border scan (grid boundary counts as background)."""
    d, h, w = mask.shape
    out = np.zeros_like(mask, dtype=bool)
    for z, y, x in np.argwhere(mask):
        for dz, dy, dx in neighbours(6):
            nz, ny, nx = z + dz, y + dy, x + dx
            if not (0 <= nz < d and 0 <= ny < h and 0 <= nx < w) or not mask[nz, ny, nx]:
                out[z, y, x] = True
                break
    return out


def _pairwise_min_dists(a_pts: np.ndarray, b_pts: np.ndarray) -> np.ndarray:
    diff = a_pts[:, None, :] - b_pts[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=2)).min(axis=1)


def brute_assd(p: BinaryMask, g: BinaryMask) -> float:
    """All-pairs surface-distance oracle for the symmetric average."""
    spacing = np.asarray(p.spacing)
    sp = np.argwhere(brute_surface(p.data.astype(bool))) * spacing
    sg = np.argwhere(brute_surface(g.data.astype(bool))) * spacing
    d_pg = _pairwise_min_dists(sp, sg)
    d_gp = _pairwise_min_dists(sg, sp)
    return float((d_pg.sum() + d_gp.sum()) / (len(sp) + len(sg)))


def brute_ahd(p: BinaryMask, g: BinaryMask) -> float:
    """All-pairs full-voxel-set oracle for the max of directed averages."""
    spacing = np.asarray(p.spacing)
    vp = np.argwhere(p.data) * spacing
    vg = np.argwhere(g.data) * spacing
    return float(max(
        _pairwise_min_dists(vp, vg).mean(),
        _pairwise_min_dists(vg, vp).mean(),
    ))


def straight_tube(length: int = 20, radius: int = 3, axis: int = 2,
                  pad: int = 2) -> np.ndarray:
    """Solid straight digital cylinder (disk of squared radius <= radius^2)."""
    side = 2 * (radius + pad) + 1
    shape = [side, side, side]
    shape[axis] = length
    zz, yy, xx = np.mgrid[0:shape[0], 0:shape[1], 0:shape[2]].astype(float)
    planes = [zz, yy, xx]
    del planes[axis]
    c = (side - 1) / 2
    return ((planes[0] - c) ** 2 + (planes[1] - c) ** 2 <= radius ** 2).astype(np.uint8)


def random_mask(seed: int, shape=(4, 4, 4), density: float = 0.4) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return (rng.random(shape) < density).astype(np.uint8)
