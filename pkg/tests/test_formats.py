import numpy as np
import pytest

from gesturekit import formats
from gesturekit.errors import CheckpointError, DataError


def test_frames_round_trip(tmp_path):
    data = np.arange(12, dtype=np.float64).reshape(3, 4)
    path = tmp_path / "x.gft"
    formats.write_frames(path, data, frame_rate=15.0)
    back, rate = formats.read_frames(path)
    assert rate == 15.0
    assert back.shape == (3, 4)
    np.testing.assert_array_equal(back, data)


def test_frames_preserve_nan(tmp_path):
    data = np.ones((4, 2))
    data[2] = np.nan
    path = tmp_path / "x.gft"
    formats.write_frames(path, data)
    back, _ = formats.read_frames(path)
    assert np.isnan(back[2]).all()
    assert np.isfinite(back[[0, 1, 3]]).all()


def test_frames_bad_magic(tmp_path):
    path = tmp_path / "x.gft"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(DataError, match="magic"):
        formats.read_frames(path)


def test_frames_truncated_payload(tmp_path):
    path = tmp_path / "x.gft"
    formats.write_frames(path, np.ones((4, 4)))
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(DataError, match="payload"):
        formats.read_frames(path)


def test_frames_dims_check(tmp_path):
    path = tmp_path / "x.gft"
    formats.write_frames(path, np.ones((4, 5)))
    with pytest.raises(DataError, match="dims"):
        formats.read_frames(path, expect_dims=28)


def test_frames_reject_empty():
    with pytest.raises(DataError):
        formats.write_frames("/dev/null", np.ones((0, 4)))


def test_arrays_round_trip(tmp_path):
    path = tmp_path / "x.gck"
    arrays = {"w": np.random.default_rng(0).normal(size=(3, 2, 4)),
              "b": np.array(2.5),
              "v": np.arange(5, dtype=np.float64)}
    config = {"kind": "test", "n": 3}
    formats.write_arrays(path, config, arrays)
    version, config2, back = formats.read_arrays(path)
    assert version == formats.ARRAY_VERSION
    assert config2 == config
    assert set(back) == set(arrays)
    for name in arrays:
        np.testing.assert_array_equal(back[name], arrays[name])
        assert back[name].shape == arrays[name].shape


def test_arrays_deterministic_bytes(tmp_path):
    arrays = {"b": np.ones(3), "a": np.zeros((2, 2))}
    p1, p2 = tmp_path / "a.gck", tmp_path / "b.gck"
    formats.write_arrays(p1, {"k": 1}, arrays)
    formats.write_arrays(p2, {"k": 1}, dict(reversed(list(arrays.items()))))
    assert p1.read_bytes() == p2.read_bytes()


def test_arrays_bad_magic(tmp_path):
    path = tmp_path / "x.gck"
    formats.write_arrays(path, {}, {"a": np.ones(2)})
    blob = bytearray(path.read_bytes())
    blob[:4] = b"XXXX"
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="magic"):
        formats.read_arrays(path)


def test_arrays_truncated(tmp_path):
    path = tmp_path / "x.gck"
    formats.write_arrays(path, {"k": 1}, {"a": np.ones(8)})
    blob = path.read_bytes()
    path.write_bytes(blob[:-4])
    with pytest.raises(CheckpointError):
        formats.read_arrays(path)
