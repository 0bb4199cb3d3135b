# cython: boundscheck=False, wraparound=False, nonecheck=False, cdivision=True
"""Compiled thinning kernel; algorithmic twin of ``_thinning_py``.

Same direction cycle, same sequential lexicographic deletion order and the
same local simple-point test, so outputs are bit-identical to the
fallback.
"""

import numpy as np

cimport numpy as cnp

from ._tables import packed_tables

cnp.import_array()

COMPILED = True

_T = packed_tables()
cdef int[:, ::1] _OFFSETS = _T["offsets"]
cdef int[::1] _FACE_IDX = _T["face_idx"]
cdef int[:, ::1] _ADJ26 = _T["adj26"]
cdef int[::1] _ADJ26_N = _T["adj26_n"]
cdef int[:, ::1] _ADJ6 = _T["adj6"]
cdef int[::1] _ADJ6_N = _T["adj6_n"]

DEF CENTER = 13


cdef bint _is_simple(unsigned char* nb) noexcept nogil:
    cdef int stack[27]
    cdef unsigned char seen[27]
    cdef int comps, top, i, u, v, k
    # exactly one 26-component of foreground cells around the centre
    for i in range(27):
        seen[i] = 0
    comps = 0
    for i in range(27):
        if i == CENTER or not nb[i] or seen[i]:
            continue
        comps += 1
        if comps > 1:
            return False
        top = 0
        stack[top] = i
        seen[i] = 1
        top += 1
        while top > 0:
            top -= 1
            u = stack[top]
            for k in range(_ADJ26_N[u]):
                v = _ADJ26[u, k]
                if nb[v] and not seen[v]:
                    seen[v] = 1
                    stack[top] = v
                    top += 1
    if comps != 1:
        return False
    # exactly one 6-component of background cells in the 18-neighbourhood
    # that touches a face neighbour of the centre
    for i in range(27):
        seen[i] = 0
    comps = 0
    for k in range(6):
        i = _FACE_IDX[k]
        if nb[i] or seen[i]:
            continue
        comps += 1
        if comps > 1:
            return False
        top = 0
        stack[top] = i
        seen[i] = 1
        top += 1
        while top > 0:
            top -= 1
            u = stack[top]
            for v in range(_ADJ6_N[u]):
                if not nb[_ADJ6[u, v]] and not seen[_ADJ6[u, v]]:
                    seen[_ADJ6[u, v]] = 1
                    stack[top] = _ADJ6[u, v]
                    top += 1
    return comps == 1


def thin(mask) -> int:
    """Thin a uint8 {0,1} array in place; returns the number of passes."""
    if mask.ndim != 3:
        raise ValueError(f"expected a 3D mask, got ndim={mask.ndim}")
    cdef Py_ssize_t d = mask.shape[0]
    cdef Py_ssize_t h = mask.shape[1]
    cdef Py_ssize_t w = mask.shape[2]
    pad_arr = np.zeros((d + 2, h + 2, w + 2), dtype=np.uint8)
    pad_arr[1:-1, 1:-1, 1:-1] = mask
    cdef unsigned char[:, :, ::1] pad = pad_arr

    cdef Py_ssize_t deltas[27]
    cdef Py_ssize_t dir_deltas[6]
    cdef Py_ssize_t w2 = w + 2
    cdef Py_ssize_t h2w2 = (h + 2) * w2
    cdef int i, k
    for i in range(27):
        deltas[i] = _OFFSETS[i, 0] * h2w2 + _OFFSETS[i, 1] * w2 + _OFFSETS[i, 2]
    # fixed direction cycle: -z, +z, -y, +y, -x, +x
    dir_deltas[0] = -h2w2
    dir_deltas[1] = h2w2
    dir_deltas[2] = -w2
    dir_deltas[3] = w2
    dir_deltas[4] = -1
    dir_deltas[5] = 1

    cdef unsigned char* base = &pad[0, 0, 0]
    cdef unsigned char nb[27]
    cdef Py_ssize_t z, y, x, idx, c
    cdef Py_ssize_t n_cand
    cdef int passes = 0
    cdef int sub
    cdef long changed
    cdef int n26
    cand_arr = np.empty(d * h * w, dtype=np.intp)
    cdef Py_ssize_t[::1] cand = cand_arr
    with nogil:
        while True:
            changed = 0
            for sub in range(6):
                # mark this direction's border voxels before deleting any
                n_cand = 0
                for z in range(1, d + 1):
                    for y in range(1, h + 1):
                        idx = z * h2w2 + y * w2 + 1
                        for x in range(1, w + 1):
                            if base[idx] and not base[idx + dir_deltas[sub]]:
                                cand[n_cand] = idx
                                n_cand += 1
                            idx += 1
                for c in range(n_cand):
                    idx = cand[c]
                    if not base[idx]:
                        continue  # already deleted earlier in this subpass
                    n26 = 0
                    for i in range(27):
                        nb[i] = base[idx + deltas[i]]
                        n26 += nb[i]
                    n26 -= 1  # centre
                    if n26 > 1 and _is_simple(nb):
                        base[idx] = 0
                        changed += 1
            passes += 1
            if changed == 0:
                break
    mask[...] = pad_arr[1:-1, 1:-1, 1:-1]
    return passes
