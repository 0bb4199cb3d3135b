"""Pure-Python thinning kernel (fallback twin of the compiled extension).

Sequential topology-preserving thinning. Every pass cycles the six border
directions; a subpass first marks the voxels whose face neighbour in the
current direction is background, then visits the marked voxels in
lexicographic order, re-checks each against the live mask and deletes it
only when the deletion provably keeps both the 26-connected foreground
and the 6-connected background component structure intact (local
simple-point test by exhaustive component counting in the 3x3x3
neighbourhood). Curve endpoints are never deleted. Passes repeat until a
fixpoint. Candidate marking from the subpass-start state erodes exactly
one voxel layer per direction per pass, which keeps the surviving curve
centred; cells outside the grid count as background.
"""

from __future__ import annotations

import numpy as np

from ._tables import ADJ26, ADJ6_N18, CENTER, FACE_IDX, N26_IDX, OFFSETS

COMPILED = False

# fixed direction cycle: -z, +z, -y, +y, -x, +x
DIRECTIONS = [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)]


def _is_simple(nb) -> bool:
    # exactly one 26-component of foreground cells around the centre
    seen = [False] * 27
    comps = 0
    for i in N26_IDX:
        if nb[i] and not seen[i]:
            comps += 1
            if comps > 1:
                return False
            stack = [i]
            seen[i] = True
            while stack:
                u = stack.pop()
                for v in ADJ26[u]:
                    if nb[v] and not seen[v]:
                        seen[v] = True
                        stack.append(v)
    if comps != 1:
        return False
    # exactly one 6-component of background cells in the 18-neighbourhood
    # that touches a face neighbour of the centre
    seen = [False] * 27
    comps = 0
    for i in FACE_IDX:
        if not nb[i] and not seen[i]:
            comps += 1
            if comps > 1:
                return False
            stack = [i]
            seen[i] = True
            while stack:
                u = stack.pop()
                for v in ADJ6_N18[u]:
                    if not nb[v] and not seen[v]:
                        seen[v] = True
                        stack.append(v)
    return comps == 1


def thin(mask: np.ndarray) -> int:
    """Thin a uint8 {0,1} array in place; returns the number of passes."""
    if mask.ndim != 3:
        raise ValueError(f"expected a 3D mask, got ndim={mask.ndim}")
    d, h, w = mask.shape
    pad = np.zeros((d + 2, h + 2, w + 2), dtype=np.uint8)
    pad[1:-1, 1:-1, 1:-1] = mask
    flat = pad.ravel()
    h2w2 = (h + 2) * (w + 2)
    w2 = w + 2
    deltas = [dz * h2w2 + dy * w2 + dx for dz, dy, dx in OFFSETS]
    dir_deltas = [dz * h2w2 + dy * w2 + dx for dz, dy, dx in DIRECTIONS]
    passes = 0
    while True:
        changed = 0
        for dd in dir_deltas:
            # mark this direction's border voxels before deleting any of them
            fg = np.flatnonzero(flat)
            candidates = fg[flat[fg + dd] == 0].tolist()
            for idx in candidates:
                if not flat[idx]:
                    continue  # already deleted earlier in this subpass
                nb = [flat[idx + o] for o in deltas]
                n26 = sum(nb) - nb[CENTER]
                if n26 <= 1:
                    continue  # isolated voxel or curve endpoint
                if _is_simple(nb):
                    flat[idx] = 0
                    changed += 1
        passes += 1
        if changed == 0:
            break
    mask[...] = pad[1:-1, 1:-1, 1:-1]
    return passes
