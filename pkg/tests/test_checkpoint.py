"""Checkpoint byte-layout round trips."""

import numpy as np
import pytest

from segrl import checkpoint as ckpt


def test_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {
        "policy/w1": rng.standard_normal((4, 7)),
        "policy/b1": rng.standard_normal(7),
        "critic/block0/attn": rng.standard_normal((2, 3, 5)),
        "scalar": np.array(3.5),
    }
    meta = {"step": 12, "rng": {"state": 123456789, "inc": 11}}
    path = str(tmp_path / "run.ckpt")
    ckpt.save(path, arrays, meta)
    loaded, loaded_meta = ckpt.load(path)
    assert set(loaded) == set(arrays)
    for name, arr in arrays.items():
        assert loaded[name].shape == arr.shape
        assert np.array_equal(
            loaded[name].view(np.uint64), np.asarray(arr).view(np.uint64)), name
    assert loaded_meta == meta


def test_save_is_atomic_replace(tmp_path):
    path = str(tmp_path / "run.ckpt")
    ckpt.save(path, {"a": np.ones(3)}, {"v": 1})
    ckpt.save(path, {"a": np.zeros(3)}, {"v": 2})
    arrays, meta = ckpt.load(path)
    assert meta["v"] == 2
    assert np.all(arrays["a"] == 0.0)


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(ckpt.CheckpointError):
        ckpt.load(str(p))


def test_truncated_file_rejected(tmp_path):
    path = str(tmp_path / "run.ckpt")
    ckpt.save(path, {"a": np.ones(10)}, {})
    raw = open(path, "rb").read()
    open(path, "wb").write(raw[:-8])
    with pytest.raises(ckpt.CheckpointError):
        ckpt.load(path)


def test_special_values_survive(tmp_path):
    arr = np.array([0.0, -0.0, np.inf, -np.inf, np.nan, 1e-308, 1.7976931348623157e308])
    path = str(tmp_path / "run.ckpt")
    ckpt.save(path, {"x": arr}, {})
    loaded, _ = ckpt.load(path)
    assert np.array_equal(loaded["x"].view(np.uint64), arr.view(np.uint64))
