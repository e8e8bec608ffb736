import numpy as np
import pytest

from flowedit.checkpoint import (
    CheckpointError,
    load_arrays,
    load_manifest,
    save_arrays,
    save_manifest,
)
from flowedit.rng import substream


def test_roundtrip_bit_exact(tmp_path):
    rng = substream(1, "ckpt")
    arrays = [
        rng.standard_normal((3, 5)),
        rng.standard_normal(7),
        np.array(3.14),
        rng.standard_normal((2, 2, 2)),
    ]
    path = tmp_path / "params.cfk"
    save_arrays(path, arrays)
    loaded = load_arrays(path)
    assert len(loaded) == len(arrays)
    for a, b in zip(arrays, loaded):
        assert a.shape == b.shape
        assert a.tobytes() == b.tobytes()


def test_magic_layout(tmp_path):
    path = tmp_path / "p.cfk"
    save_arrays(path, [np.zeros((2, 3))])
    blob = path.read_bytes()
    assert blob[:4] == b"CFK1"
    # count=1, ndim=2, dims (2, 3), then 6 float64s
    assert blob[4:8] == (1).to_bytes(4, "little")
    assert blob[8:12] == (2).to_bytes(4, "little")
    assert blob[12:16] == (2).to_bytes(4, "little")
    assert blob[16:20] == (3).to_bytes(4, "little")
    assert len(blob) == 20 + 6 * 8


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.cfk"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(CheckpointError, match="magic"):
        load_arrays(path)


def test_truncated_rejected(tmp_path):
    path = tmp_path / "t.cfk"
    save_arrays(path, [np.ones(4)])
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        load_arrays(path)


def test_manifest_roundtrip(tmp_path):
    manifest = {"horizon": 8, "execute": 4, "action_dim": 3, "beta": 0.1, "euler_steps": 10}
    path = tmp_path / "policy.json"
    save_manifest(path, manifest)
    assert load_manifest(path) == manifest
