"""On-disk container format for voxel grids.

A grid is stored as two sibling files: ``<name>.json`` holding the header
``{"shape": [D,H,W], "spacing_mm": [sz,sy,sx], "dtype": "f32"|"u8",
"order": "row-major, W fastest"}`` and ``<name>.raw`` holding exactly
D*H*W little-endian values of the declared dtype.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .grid import BinaryMask, Volume

GRID_ORDER = "row-major, W fastest"

_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


class ContainerError(ValueError):
    """Malformed or inconsistent grid container files."""


def save_grid(directory, name: str, grid) -> Path:
    """Write a Volume or BinaryMask as ``<name>.json`` + ``<name>.raw``.

    Returns the header path.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if isinstance(grid, BinaryMask):
        dtype_tag = "u8"
    elif isinstance(grid, Volume):
        dtype_tag = "f32"
    else:
        raise TypeError(f"cannot save object of type {type(grid).__name__}")
    header = {
        "shape": list(grid.shape),
        "spacing_mm": list(grid.spacing),
        "dtype": dtype_tag,
        "order": GRID_ORDER,
    }
    header_path = directory / f"{name}.json"
    header_path.write_text(json.dumps(header, indent=2) + "\n")
    np.ascontiguousarray(grid.data, dtype=_DTYPES[dtype_tag]).tofile(
        directory / f"{name}.raw"
    )
    return header_path


def load_grid(directory, name: str):
    """Read a container entry back as a Volume (f32) or BinaryMask (u8)."""
    directory = Path(directory)
    header_path = directory / f"{name}.json"
    raw_path = directory / f"{name}.raw"
    if not header_path.exists() or not raw_path.exists():
        raise FileNotFoundError(f"no container entry '{name}' under {directory}")
    header = json.loads(header_path.read_text())
    for key in ("shape", "spacing_mm", "dtype", "order"):
        if key not in header:
            raise ContainerError(f"{header_path}: missing header field '{key}'")
    if header["order"] != GRID_ORDER:
        raise ContainerError(f"{header_path}: unsupported order {header['order']!r}")
    if header["dtype"] not in _DTYPES:
        raise ContainerError(f"{header_path}: unsupported dtype {header['dtype']!r}")
    shape = tuple(int(s) for s in header["shape"])
    dtype = _DTYPES[header["dtype"]]
    expected = int(np.prod(shape)) * dtype.itemsize
    actual = raw_path.stat().st_size
    if actual != expected:
        raise ContainerError(
            f"{raw_path}: payload is {actual} bytes, header implies {expected}"
        )
    data = np.fromfile(raw_path, dtype=dtype).reshape(shape)
    spacing = tuple(float(s) for s in header["spacing_mm"])
    if header["dtype"] == "u8":
        return BinaryMask(data, spacing)
    return Volume(data, spacing)
