"""Checkpoint container: round-trips, determinism, corruption handling."""

import numpy as np
import pytest

from semff.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from semff.errors import DataFormatError
from semff.tensor import Tensor


def _sample_arrays(seed=0):
    rng = np.random.default_rng(seed)
    return {
        "layer.W": rng.normal(size=(4, 3)).astype(np.float32),
        "layer.b": rng.normal(size=3).astype(np.float32),
        "deep.block.scale": np.float32(2.5),
    }


def test_round_trip_is_bit_exact(tmp_path):
    path = tmp_path / "model.sskp"
    arrays = _sample_arrays()
    save_checkpoint(path, arrays, config={"dim": 3, "margin": 0.0})
    loaded, config = load_checkpoint(path)
    assert set(loaded) == set(arrays)
    for name in arrays:
        original = np.asarray(arrays[name], dtype=np.float32)
        assert loaded[name].shape == original.shape
        assert (loaded[name].view(np.uint32) == original.view(np.uint32)).all()
    assert config == {"dim": 3.0, "margin": 0.0}


def test_tensor_values_are_accepted(tmp_path):
    path = tmp_path / "t.sskp"
    t = Tensor(np.arange(6, dtype=np.float32).reshape(2, 3))
    save_checkpoint(path, {"w": t})
    loaded, _ = load_checkpoint(path)
    assert (loaded["w"] == t.data).all()


def test_insertion_order_does_not_change_bytes(tmp_path):
    arrays = _sample_arrays()
    a, b = tmp_path / "a.sskp", tmp_path / "b.sskp"
    save_checkpoint(a, dict(arrays), config={"x": 1, "y": 2})
    save_checkpoint(b, dict(reversed(list(arrays.items()))), config={"y": 2, "x": 1})
    assert a.read_bytes() == b.read_bytes()


def test_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.sskp"
    path.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(DataFormatError, match="magic"):
        load_checkpoint(path)


def test_rejects_unknown_version(tmp_path):
    path = tmp_path / "future.sskp"
    path.write_bytes(MAGIC + (99).to_bytes(4, "little"))
    with pytest.raises(DataFormatError, match="version"):
        load_checkpoint(path)


def test_truncation_is_reported_with_context(tmp_path):
    path = tmp_path / "full.sskp"
    save_checkpoint(path, _sample_arrays())
    blob = path.read_bytes()
    clipped = tmp_path / "clipped.sskp"
    clipped.write_bytes(blob[:-5])
    with pytest.raises(DataFormatError, match="truncated"):
        load_checkpoint(clipped)


def test_every_truncation_point_fails_cleanly_or_loads_a_prefix(tmp_path):
    # Any cut must either raise DataFormatError or land on a record boundary
    # and load a subset of the original records; no other exception types.
    path = tmp_path / "full.sskp"
    original = {"w": np.ones((2, 2), dtype=np.float32)}
    save_checkpoint(path, original, config={"k": 1})
    blob = path.read_bytes()
    truncated_errors = 0
    for cut in range(5, len(blob)):
        clipped = tmp_path / "cut.sskp"
        clipped.write_bytes(blob[:cut])
        try:
            arrays, config = load_checkpoint(clipped)
        except DataFormatError:
            truncated_errors += 1
            continue
        for name, arr in arrays.items():
            assert (arr == original[name]).all()
        assert set(config) <= {"k"}
    assert truncated_errors > 0


def test_config_namespace_is_reserved():
    with pytest.raises(ValueError, match="config"):
        save_checkpoint("/tmp/never-written.sskp",
                        {"config.sneaky": np.zeros(1, dtype=np.float32)})


def test_empty_checkpoint_round_trips(tmp_path):
    path = tmp_path / "empty.sskp"
    save_checkpoint(path, {})
    arrays, config = load_checkpoint(path)
    assert arrays == {} and config == {}


def test_scalar_rank_zero_record(tmp_path):
    path = tmp_path / "s.sskp"
    save_checkpoint(path, {"s": np.float32(7.0)})
    arrays, _ = load_checkpoint(path)
    assert arrays["s"].shape == ()
    assert arrays["s"] == np.float32(7.0)
