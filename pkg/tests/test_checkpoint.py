import numpy as np
import pytest

from vlprompt.numerics import CheckpointError, load_checkpoint, save_checkpoint


def test_round_trip_bit_exact(tmp_path, rng):
    params = {"a.weight": rng.normal(size=(3, 4)).astype(np.float32),
              "a.bias": rng.normal(size=4).astype(np.float32),
              "scalar": np.array(np.float32(np.pi))}
    params["a.weight"][0, 0] = np.float32(np.nextafter(np.float32(1), np.float32(2)))
    save_checkpoint(tmp_path / "ck", params, {"note": "x", "dims": [1, 2]})
    loaded, meta = load_checkpoint(tmp_path / "ck")
    assert list(loaded) == list(params)
    for k in params:
        assert loaded[k].tobytes() == params[k].tobytes()
    assert meta == {"note": "x", "dims": [1, 2]}
    manifest = (tmp_path / "ck" / "manifest.txt").read_text()
    assert "param a.bias shape=4 offset=48 count=4" in manifest


def test_missing_and_truncated(tmp_path, rng):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope")
    save_checkpoint(tmp_path / "ck", {"w": rng.normal(size=(8,)).astype(np.float32)})
    blob = tmp_path / "ck" / "params.bin"
    blob.write_bytes(blob.read_bytes()[:10])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "ck")
