import json

import numpy as np
import pytest

from uadsn.grid import BinaryMask, Volume
from uadsn.io import GRID_ORDER, ContainerError, load_grid, save_grid


def test_volume_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    v = Volume(rng.random((3, 4, 5)), (0.625, 0.293, 0.293))
    save_grid(tmp_path, "vol", v)
    back = load_grid(tmp_path, "vol")
    assert isinstance(back, Volume)
    assert (back.data == v.data).all()
    assert back.spacing == v.spacing


def test_mask_roundtrip(tmp_path):
    m = BinaryMask((np.random.default_rng(2).random((4, 4, 4)) < 0.5), (1, 2, 3))
    save_grid(tmp_path, "mask", m)
    back = load_grid(tmp_path, "mask")
    assert isinstance(back, BinaryMask)
    assert (back.data == m.data).all()


def test_header_contents(tmp_path):
    v = Volume(np.zeros((2, 3, 4)), (0.5, 0.25, 0.25))
    save_grid(tmp_path, "vol", v)
    header = json.loads((tmp_path / "vol.json").read_text())
    assert header == {
        "shape": [2, 3, 4],
        "spacing_mm": [0.5, 0.25, 0.25],
        "dtype": "f32",
        "order": GRID_ORDER,
    }
    assert (tmp_path / "vol.raw").stat().st_size == 2 * 3 * 4 * 4


def test_payload_is_little_endian_w_fastest(tmp_path):
    data = np.arange(8, dtype=np.float32).reshape(2, 2, 2)
    save_grid(tmp_path, "vol", Volume(data, (1, 1, 1)))
    raw = np.fromfile(tmp_path / "vol.raw", dtype="<f4")
    assert raw.tolist() == list(range(8))  # W varies fastest in C order


def test_truncated_payload_rejected(tmp_path):
    save_grid(tmp_path, "vol", Volume(np.zeros((2, 2, 2)), (1, 1, 1)))
    raw = tmp_path / "vol.raw"
    raw.write_bytes(raw.read_bytes()[:-4])
    with pytest.raises(ContainerError, match="bytes"):
        load_grid(tmp_path, "vol")


def test_unsupported_order_rejected(tmp_path):
    save_grid(tmp_path, "vol", Volume(np.zeros((2, 2, 2)), (1, 1, 1)))
    header_path = tmp_path / "vol.json"
    header = json.loads(header_path.read_text())
    header["order"] = "column-major"
    header_path.write_text(json.dumps(header))
    with pytest.raises(ContainerError, match="order"):
        load_grid(tmp_path, "vol")


def test_missing_entry(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_grid(tmp_path, "nope")
