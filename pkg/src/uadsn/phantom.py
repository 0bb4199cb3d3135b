"""Synthetic tubular phantom volumes and the sampling pipeline they feed.

A phantom is a thin, smooth tube at roughly nerve scale (about 1 to 1.5 mm
diameter on an anisotropic grid) embedded in noise, with optional
same-intensity distractor blobs away from the tube. The tube centreline is
a spline parameterized by depth with bounded in-plane slope, so every
axial slice intersects the tube exactly once.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

from .grid import BinaryMask, ShapeError, Volume, connected_components
from .io import load_grid, save_grid

# block extents in (depth, height, width) order; equals 64 x 64 x 32 in
# the (X, Y, Z) convention used by the training configuration
DEFAULT_BLOCK_DHW = (32, 64, 64)

# keeps slanted cross-sections under 1.5x the perpendicular disk area
MAX_INPLANE_SLOPE = 0.45

# tube centreline stays this fraction away from the in-plane faces, so a
# 15-degree rotation about the depth axis cannot push it off the grid
INPLANE_MARGIN_FRACTION = 0.16


class PhantomGenerationError(RuntimeError):
    """The requested tube cannot be generated inside the volume."""


class BlockSamplingError(RuntimeError):
    """No block containing foreground was found within the attempt bound."""


@dataclass(frozen=True)
class PhantomSpec:
    """Parameters of one synthetic case.

    Attributes:
        volume_shape: (D, H, W) voxel counts.
        spacing_mm: (sz, sy, sx) voxel size in mm.
        tube_radius_mm: (low, high) sampling range of the tube radius.
        centerline_control_points: spline control point count (>= 2).
        noise_std: std of additive Gaussian intensity noise (>= 0).
        background_structures: number of distractor blobs.
        seed: RNG seed; equal seeds give bit-identical samples.
    """

    volume_shape: tuple[int, int, int] = (96, 128, 128)
    spacing_mm: tuple[float, float, float] = (0.625, 0.293, 0.293)
    tube_radius_mm: tuple[float, float] = (0.5, 0.75)
    centerline_control_points: int = 5
    noise_std: float = 0.1
    background_structures: int = 3
    seed: int = 0

    def __post_init__(self):
        if len(self.volume_shape) != 3 or min(self.volume_shape) < 1:
            raise ValueError(f"bad volume_shape {self.volume_shape}")
        if len(self.spacing_mm) != 3 or min(self.spacing_mm) <= 0:
            raise ValueError(f"bad spacing_mm {self.spacing_mm}")
        lo, hi = self.tube_radius_mm
        half_extent = min(n * s for n, s in zip(self.volume_shape, self.spacing_mm)) / 2
        if not 0 < lo <= hi < half_extent:
            raise ValueError(
                f"tube radius range {self.tube_radius_mm} must lie in (0, {half_extent:.3f})"
            )
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.centerline_control_points < 2:
            raise ValueError("need at least 2 centerline control points")
        if self.background_structures < 0:
            raise ValueError("background_structures must be >= 0")


@dataclass(frozen=True)
class Sample:
    """An image volume with its tube ground-truth label."""

    image: Volume
    label: BinaryMask
    case_id: str

    def __post_init__(self):
        if self.image.shape != self.label.shape:
            raise ShapeError(
                f"image/label shapes differ: {self.image.shape} vs {self.label.shape}"
            )
        if self.image.spacing != self.label.spacing:
            raise ShapeError(
                f"image/label spacings differ: {self.image.spacing} vs {self.label.spacing}"
            )


def _spline_centerline(rng, spec: PhantomSpec, radius: float):
    """Dense centreline points (N, 3) in physical mm, parameterized by z."""
    d, h, w = spec.volume_shape
    sz, sy, sx = spec.spacing_mm
    ext_y = (h - 1) * sy
    ext_x = (w - 1) * sx
    margin_y = radius + sy + INPLANE_MARGIN_FRACTION * ext_y
    margin_x = radius + sx + INPLANE_MARGIN_FRACTION * ext_x
    if margin_y * 2 >= ext_y or margin_x * 2 >= ext_x:
        raise PhantomGenerationError(
            f"tube radius {radius:.3f} mm cannot fit the in-plane extent"
        )
    n = spec.centerline_control_points
    z_ctrl = np.linspace(0.0, (d - 1) * sz, n)
    dz = z_ctrl[1] - z_ctrl[0] if n > 1 else 1.0
    step = MAX_INPLANE_SLOPE * dz

    def walk(lo, hi):
        vals = np.empty(n)
        vals[0] = rng.uniform(lo, hi)
        for i in range(1, n):
            vals[i] = np.clip(vals[i - 1] + rng.uniform(-step, step), lo, hi)
        return vals

    y_ctrl = walk(margin_y, ext_y - margin_y)
    x_ctrl = walk(margin_x, ext_x - margin_x)
    step_mm = min(spec.spacing_mm) / 4.0
    z_dense = np.arange(0.0, (d - 1) * sz + step_mm / 2, step_mm)
    z_dense[-1] = min(z_dense[-1], (d - 1) * sz)
    if n == 2:
        y_dense = np.interp(z_dense, z_ctrl, y_ctrl)
        x_dense = np.interp(z_dense, z_ctrl, x_ctrl)
    else:
        y_dense = CubicSpline(z_ctrl, y_ctrl)(z_dense)
        x_dense = CubicSpline(z_ctrl, x_ctrl)(z_dense)
    # spline overshoot beyond the safe band means the tube could leave the
    # grid or slant too steeply; caller retries with fresh draws
    in_band = (
        (y_dense >= margin_y - sy).all()
        and (y_dense <= ext_y - margin_y + sy).all()
        and (x_dense >= margin_x - sx).all()
        and (x_dense <= ext_x - margin_x + sx).all()
    )
    slope_y = np.diff(y_dense) / step_mm
    slope_x = np.diff(x_dense) / step_mm
    gentle = bool((np.hypot(slope_y, slope_x) <= 1.1).all())
    if not (in_band and gentle):
        return None
    return np.stack([z_dense, y_dense, x_dense], axis=1)


def _voxelize_tube(points: np.ndarray, spec: PhantomSpec, radius: float) -> np.ndarray:
    """Voxel-centre-inside test against the densely sampled centreline."""
    d, h, w = spec.volume_shape
    sz, sy, sx = spec.spacing_mm
    tree = cKDTree(points)
    lo = points.min(axis=0) - radius
    hi = points.max(axis=0) + radius
    z0, y0, x0 = (max(0, int(np.floor(c / s))) for c, s in zip(lo, spec.spacing_mm))
    z1 = min(d - 1, int(np.ceil(hi[0] / sz)))
    y1 = min(h - 1, int(np.ceil(hi[1] / sy)))
    x1 = min(w - 1, int(np.ceil(hi[2] / sx)))
    zz, yy, xx = np.meshgrid(
        np.arange(z0, z1 + 1) * sz,
        np.arange(y0, y1 + 1) * sy,
        np.arange(x0, x1 + 1) * sx,
        indexing="ij",
    )
    centers = np.stack([zz.ravel(), yy.ravel(), xx.ravel()], axis=1)
    dist, _ = tree.query(centers, distance_upper_bound=radius * 1.0001)
    inside = (dist <= radius).reshape(zz.shape)
    label = np.zeros(spec.volume_shape, dtype=np.uint8)
    label[z0:z1 + 1, y0:y1 + 1, x0:x1 + 1] = inside
    return label


def _add_distractors(rng, spec: PhantomSpec, label: np.ndarray, base: np.ndarray) -> None:
    """Paint same-intensity ellipsoid blobs that never touch the tube."""
    if spec.background_structures == 0:
        return
    d, h, w = spec.volume_shape
    sz, sy, sx = spec.spacing_mm
    forbidden = ndimage.binary_dilation(label, iterations=2)
    for _ in range(spec.background_structures):
        for _ in range(50):
            cz, cy, cx = (rng.integers(0, n) for n in (d, h, w))
            az, ay, ax = rng.uniform(0.4, 1.2, size=3)
            rz = max(1, int(np.ceil(az / sz)))
            ry = max(1, int(np.ceil(ay / sy)))
            rx = max(1, int(np.ceil(ax / sx)))
            zsl = slice(max(0, cz - rz), min(d, cz + rz + 1))
            ysl = slice(max(0, cy - ry), min(h, cy + ry + 1))
            xsl = slice(max(0, cx - rx), min(w, cx + rx + 1))
            zz, yy, xx = np.meshgrid(
                (np.arange(zsl.start, zsl.stop) - cz) * sz / az,
                (np.arange(ysl.start, ysl.stop) - cy) * sy / ay,
                (np.arange(xsl.start, xsl.stop) - cx) * sx / ax,
                indexing="ij",
            )
            blob = zz * zz + yy * yy + xx * xx <= 1.0
            if not blob.any() or (blob & forbidden[zsl, ysl, xsl]).any():
                continue
            base[zsl, ysl, xsl] = np.maximum(base[zsl, ysl, xsl], blob.astype(np.float32))
            break


def generate_phantom(spec: PhantomSpec) -> Sample:
    """Generate one case deterministically from its spec.

    The label is the voxelization of a smooth tube spanning the full depth;
    the image is the label intensity (foreground 1.0, background 0.0) plus
    distractor blobs and Gaussian noise. The label is guaranteed nonempty
    and a single 26-connected component.
    """
    rng = np.random.default_rng(spec.seed)
    label = None
    for _ in range(20):
        radius = float(rng.uniform(*spec.tube_radius_mm))
        points = _spline_centerline(rng, spec, radius)
        if points is None:
            continue
        cand = _voxelize_tube(points, spec, radius)
        if cand.sum() == 0:
            continue
        _, sizes = connected_components(BinaryMask(cand, spec.spacing_mm))
        if len(sizes) != 1:
            continue
        if not cand.any(axis=(1, 2)).all():
            continue  # some axial slice missed the tube
        label = cand
        break
    if label is None:
        raise PhantomGenerationError(
            f"no valid tube after 20 attempts for spec with seed {spec.seed}"
        )
    base = label.astype(np.float32)
    _add_distractors(rng, spec, label, base)
    if spec.noise_std > 0:
        image = base + rng.normal(0.0, spec.noise_std, spec.volume_shape).astype(np.float32)
    else:
        image = base
    return Sample(
        image=Volume(image, spec.spacing_mm),
        label=BinaryMask(label, spec.spacing_mm),
        case_id=f"phantom-{spec.seed:06d}",
    )


@dataclass(frozen=True)
class AugmentParams:
    """One concrete draw of the augmentation transform."""

    crop_origin: tuple[int, int, int]
    crop_size: tuple[int, int, int]
    scale: float
    rotate_deg: float
    flips: tuple[bool, bool, bool]


def draw_augment_params(
    rng,
    shape: tuple[int, int, int],
    crop_fraction: tuple[float, float] = (0.9, 1.0),
    scale_range: tuple[float, float] = (0.9, 1.1),
    max_rotate_deg: float = 15.0,
    mirror_prob: float = 0.5,
    min_size: tuple[int, int, int] = (1, 1, 1),
) -> AugmentParams:
    fracs = rng.uniform(crop_fraction[0], crop_fraction[1], size=3)
    size = tuple(
        int(np.clip(round(n * f), mn, n)) for n, f, mn in zip(shape, fracs, min_size)
    )
    origin = tuple(int(rng.integers(0, n - s + 1)) for n, s in zip(shape, size))
    scale = float(rng.uniform(*scale_range))
    angle = float(rng.uniform(-max_rotate_deg, max_rotate_deg))
    flips = tuple(bool(b) for b in rng.random(3) < mirror_prob)
    return AugmentParams(origin, size, scale, angle, flips)


def augment(
    s: Sample,
    rng=None,
    params: AugmentParams | None = None,
    **draw_kwargs,
) -> Sample:
    """Random crop, isotropic scale, rotation about the depth axis, and
    per-axis mirroring, applied identically to image and label.

    The label uses nearest-neighbour resampling and is re-binarized. Pass
    ``params`` to replay a fixed transform instead of drawing from ``rng``.
    """
    if params is None:
        if rng is None:
            raise ValueError("augment needs either an rng or explicit params")
        params = draw_augment_params(rng, s.image.shape, **draw_kwargs)
    img = np.array(s.image.data)
    lab = np.array(s.label.data)
    (oz, oy, ox), (cd, ch, cw) = params.crop_origin, params.crop_size
    img = img[oz:oz + cd, oy:oy + ch, ox:ox + cw]
    lab = lab[oz:oz + cd, oy:oy + ch, ox:ox + cw]
    if params.scale != 1.0:
        img = ndimage.zoom(img, params.scale, order=1)
        lab = ndimage.zoom(lab, params.scale, order=0)
    if params.rotate_deg != 0.0:
        img = ndimage.rotate(
            img, params.rotate_deg, axes=(1, 2), reshape=False, order=1,
            mode="constant", cval=0.0,
        )
        lab = ndimage.rotate(
            lab, params.rotate_deg, axes=(1, 2), reshape=False, order=0,
            mode="constant", cval=0,
        )
    for axis, flip in enumerate(params.flips):
        if flip:
            img = np.flip(img, axis=axis)
            lab = np.flip(lab, axis=axis)
    lab = (np.asarray(lab) > 0).astype(np.uint8)
    spacing = s.image.spacing
    return Sample(
        image=Volume(np.ascontiguousarray(img), spacing),
        label=BinaryMask(np.ascontiguousarray(lab), spacing),
        case_id=s.case_id,
    )


def sample_block(
    s: Sample,
    rng,
    block_shape: tuple[int, int, int] = DEFAULT_BLOCK_DHW,
    max_attempts: int = 1000,
) -> Sample:
    """Crop a random block that contains at least one tube voxel.

    Draws uniform origins and retries until the block's label is nonempty,
    bounded at ``max_attempts`` draws.
    """
    shape = s.image.shape
    for axis in range(3):
        if shape[axis] < block_shape[axis]:
            raise ShapeError(
                f"volume {shape} smaller than block {block_shape} along axis {axis}"
            )
    lab = s.label.data
    for _ in range(max_attempts):
        oz, oy, ox = (
            int(rng.integers(0, n - b + 1)) for n, b in zip(shape, block_shape)
        )
        bd, bh, bw = block_shape
        if lab[oz:oz + bd, oy:oy + bh, ox:ox + bw].any():
            return Sample(
                image=Volume(s.image.data[oz:oz + bd, oy:oy + bh, ox:ox + bw], s.image.spacing),
                label=BinaryMask(lab[oz:oz + bd, oy:oy + bh, ox:ox + bw], s.label.spacing),
                case_id=s.case_id,
            )
    raise BlockSamplingError(
        f"no block containing foreground after {max_attempts} attempts ({s.case_id})"
    )


def extract_axial_slices(
    block: Volume, expected_shape: tuple[int, int, int] = DEFAULT_BLOCK_DHW
) -> list[np.ndarray]:
    """Split a block into its ordered axial (constant-depth) planes."""
    if block.shape != tuple(expected_shape):
        raise ShapeError(f"expected block of shape {expected_shape}, got {block.shape}")
    return [np.array(block.data[k]) for k in range(block.shape[0])]


def restack_axial_slices(slices, spacing) -> Volume:
    """Inverse of extract_axial_slices: stack planes back along depth."""
    return Volume(np.stack(list(slices), axis=0), spacing)


# ---------------------------------------------------------------------------
# dataset persistence (one directory per case + manifest.json)

def save_sample(case_dir, s: Sample) -> None:
    save_grid(case_dir, "image", s.image)
    save_grid(case_dir, "label", s.label)


def load_sample(case_dir, case_id: str) -> Sample:
    return Sample(
        image=load_grid(case_dir, "image"),
        label=load_grid(case_dir, "label"),
        case_id=case_id,
    )


def generate_dataset(
    root,
    spec: PhantomSpec,
    n_train: int,
    n_eval: int,
    seed: int,
) -> dict:
    """Write ``n_train + n_eval`` cases under ``root`` and the manifest.

    Case k is generated from ``seed + k``, so the dataset is reproducible
    byte for byte from (spec, seed).
    """
    root = Path(root)
    cases = []
    for k in range(n_train + n_eval):
        split = "train" if k < n_train else "eval"
        idx = k if k < n_train else k - n_train
        case_id = f"{split}_{idx:03d}"
        case_spec = PhantomSpec(**{**asdict(spec), "seed": seed + k})
        sample = generate_phantom(case_spec)
        save_sample(root / "cases" / case_id, sample)
        cases.append({"id": case_id, "split": split, "seed": seed + k})
    manifest = {
        "cases": cases,
        "seed": seed,
        "phantom": {k: v for k, v in asdict(spec).items() if k != "seed"},
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def load_dataset(root) -> tuple[list[Sample], list[Sample]]:
    """Load (train, eval) samples as listed in the dataset manifest."""
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    train, eval_ = [], []
    for entry in manifest["cases"]:
        sample = load_sample(root / "cases" / entry["id"], entry["id"])
        (train if entry["split"] == "train" else eval_).append(sample)
    return train, eval_
