"""Shared neighbourhood tables for the thinning kernels.

Local cells of the 3x3x3 neighbourhood are numbered 0..26 in lexicographic
(dz, dy, dx) order; the centre is index 13. Both the compiled and the
pure-Python kernel derive their adjacency structure from these tables so
the two implementations stay in lockstep.
"""

from __future__ import annotations

import numpy as np

OFFSETS = [
    (dz, dy, dx)
    for dz in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dx in (-1, 0, 1)
]
CENTER = 13

# face (6-), edge (18-) and full (26-) neighbour index sets
FACE_IDX = [i for i, o in enumerate(OFFSETS) if sum(abs(c) for c in o) == 1]
N18_IDX = [i for i, o in enumerate(OFFSETS) if i != CENTER and sum(abs(c) for c in o) <= 2]
N26_IDX = [i for i in range(27) if i != CENTER]


def _chebyshev(i: int, j: int) -> int:
    return max(abs(a - b) for a, b in zip(OFFSETS[i], OFFSETS[j]))


def _manhattan(i: int, j: int) -> int:
    return sum(abs(a - b) for a, b in zip(OFFSETS[i], OFFSETS[j]))


# 26-adjacency between non-centre cells (for foreground component counting)
ADJ26 = [
    [j for j in N26_IDX if j != i and _chebyshev(i, j) == 1] if i != CENTER else []
    for i in range(27)
]

# 6-adjacency restricted to the 18-neighbourhood (for background counting)
_N18 = set(N18_IDX)
ADJ6_N18 = [
    [j for j in N18_IDX if _manhattan(i, j) == 1] if i in _N18 else []
    for i in range(27)
]


def packed_tables() -> dict[str, np.ndarray]:
    """Tables as flat int32 arrays, consumable by the compiled kernel."""
    adj26 = np.zeros((27, 26), dtype=np.int32)
    adj26_n = np.zeros(27, dtype=np.int32)
    adj6 = np.zeros((27, 6), dtype=np.int32)
    adj6_n = np.zeros(27, dtype=np.int32)
    for i in range(27):
        adj26_n[i] = len(ADJ26[i])
        adj26[i, : len(ADJ26[i])] = ADJ26[i]
        adj6_n[i] = len(ADJ6_N18[i])
        adj6[i, : len(ADJ6_N18[i])] = ADJ6_N18[i]
    return {
        "offsets": np.array(OFFSETS, dtype=np.int32),
        "face_idx": np.array(FACE_IDX, dtype=np.int32),
        "adj26": adj26,
        "adj26_n": adj26_n,
        "adj6": adj6,
        "adj6_n": adj6_n,
    }
