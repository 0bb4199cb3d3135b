"""Benchmark the compiled thinning kernel against the pure-Python fallback.

Run:  python benchmarks/bench_thinning.py
"""

import time

import numpy as np

from uadsn.phantom import PhantomSpec, generate_phantom
from uadsn.skeleton import _thinning_py

try:
    from uadsn.skeleton import _thinning
except ImportError:
    _thinning = None


def tube_mask(shape, seed):
    spec = PhantomSpec(
        volume_shape=shape, spacing_mm=(0.625, 0.293, 0.293),
        noise_std=0.0, background_structures=0, seed=seed,
    )
    return generate_phantom(spec).label.data


def ball_mask(side, radius):
    grid = np.mgrid[0:side, 0:side, 0:side] - (side - 1) / 2
    return (np.linalg.norm(grid, axis=0) <= radius).astype(np.uint8)


def timed(kernel, mask, repeats=3):
    best = float("inf")
    out = None
    for _ in range(repeats):
        work = mask.copy()
        t0 = time.perf_counter()
        kernel.thin(work)
        best = min(best, time.perf_counter() - t0)
        out = work
    return best, out


def main():
    cases = [
        ("tube 24x48x48", tube_mask((24, 48, 48), seed=1)),
        ("tube 48x96x96", tube_mask((48, 96, 96), seed=2)),
        ("ball r=10 in 32^3", ball_mask(32, 10)),
        ("ball r=22 in 56^3", ball_mask(56, 22)),
    ]
    print(f"{'case':<20} {'fg vox':>8} {'python':>10} {'compiled':>10} {'speedup':>8}")
    for name, mask in cases:
        t_py, out_py = timed(_thinning_py, mask, repeats=1)
        if _thinning is None:
            print(f"{name:<20} {int(mask.sum()):>8} {t_py:>9.3f}s {'n/a':>10} {'n/a':>8}")
            continue
        t_c, out_c = timed(_thinning, mask)
        agree = "" if (out_py == out_c).all() else "  OUTPUT MISMATCH"
        print(
            f"{name:<20} {int(mask.sum()):>8} {t_py:>9.3f}s {t_c:>9.4f}s "
            f"{t_py / t_c:>7.0f}x{agree}"
        )
    if _thinning is None:
        print("\ncompiled kernel not built; only the fallback was timed")


if __name__ == "__main__":
    main()
