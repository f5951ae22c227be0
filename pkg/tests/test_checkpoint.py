"""Checkpoint container round-trips and error handling."""

import numpy as np
import pytest

from gansim.checkpoint import CheckpointFormatError, load_checkpoint, save_checkpoint
from gansim.config import desk_config
from gansim.model import Simulator
from gansim.rng import SeedStream


def test_roundtrip_preserves_tensors_and_config(tmp_path):
    cfg = desk_config()
    tensors = {
        "a.weight": np.arange(12, dtype=np.float32).reshape(3, 4),
        "b.bias": np.array([1.5], dtype=np.float32),
        "scalar": np.float32(2.0),
    }
    path = tmp_path / "model.ggck"
    save_checkpoint(path, cfg, tensors, meta={"step": 7})
    cfg2, back, meta = load_checkpoint(path)
    assert cfg2 == cfg
    assert meta["step"] == 7
    assert set(back) == set(tensors)
    for k in tensors:
        np.testing.assert_array_equal(back[k], np.asarray(tensors[k], dtype=np.float32))


def test_simulator_state_roundtrip(tmp_path):
    cfg = desk_config()
    sim = Simulator(cfg, SeedStream(1).child("m"))
    path = tmp_path / "model.ggck"
    save_checkpoint(path, cfg, sim.state())
    _, tensors, _ = load_checkpoint(path)
    sim2 = Simulator(cfg, SeedStream(2).child("m"))
    sim2.load_state(tensors)
    for (n1, p1), (n2, p2) in zip(sim.named_parameters(), sim2.named_parameters()):
        assert n1 == n2
        np.testing.assert_array_equal(p1.data, p2.data)


def test_identical_states_identical_bytes(tmp_path):
    cfg = desk_config()
    tensors = {"x": np.ones((2, 2), dtype=np.float32)}
    p1, p2 = tmp_path / "a.ggck", tmp_path / "b.ggck"
    save_checkpoint(p1, cfg, tensors)
    save_checkpoint(p2, cfg, dict(reversed(list(tensors.items()))))
    assert p1.read_bytes() == p2.read_bytes()


def test_bad_magic_and_truncation(tmp_path):
    p = tmp_path / "x.ggck"
    p.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(CheckpointFormatError, match="magic"):
        load_checkpoint(p)
    cfg = desk_config()
    good = tmp_path / "good.ggck"
    save_checkpoint(good, cfg, {"x": np.ones(4, dtype=np.float32)})
    blob = good.read_bytes()
    cut = tmp_path / "cut.ggck"
    cut.write_bytes(blob[:-3])
    with pytest.raises(CheckpointFormatError, match="truncated"):
        load_checkpoint(cut)
