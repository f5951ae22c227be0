"""Configuration contracts and the two reference presets."""

import pytest

from gansim.config import ModelConfig, TrainConfig, desk_config, paper_pacman_config
from gansim.tensor import ContractError


def test_desk_preset_defaults():
    cfg = desk_config()
    assert cfg.hidden_dim == 64
    assert cfg.z_dim == 8
    assert cfg.memory_N == 9
    assert cfg.memory_D == 32
    assert cfg.image_size == 16
    assert cfg.action_count == 5


def test_paper_preset_matches_published_dimensions():
    cfg = paper_pacman_config()
    assert cfg.hidden_dim == 512
    assert cfg.z_dim == 32
    assert cfg.memory_N == 39
    assert cfg.eval_memory_N == 99
    assert cfg.memory_D == 512
    assert cfg.image_size == 84


def test_counterpart_table_is_involution():
    cfg = desk_config()
    for a, b in cfg.counterparts.items():
        assert cfg.counterparts[b] == a
    assert "stay" not in cfg.counterparts


def test_invalid_counterpart_rejected():
    with pytest.raises(ContractError, match="involution"):
        ModelConfig(counterparts={"left": "right", "right": "up", "up": "down", "down": "up"})


def test_disentangled_requires_memory():
    with pytest.raises(ContractError):
        ModelConfig(use_memory=False, use_disentangled_renderer=True)


def test_even_memory_block_rejected():
    with pytest.raises(ContractError):
        ModelConfig(memory_N=8)


def test_config_json_roundtrip():
    cfg = paper_pacman_config(object_attention="sigmoid")
    back = ModelConfig.from_dict(cfg.to_dict())
    assert back == cfg


def test_train_config_validation():
    with pytest.raises(ContractError):
        TrainConfig(sequence_length=0)
    with pytest.raises(ContractError):
        TrainConfig(warmup_initial=0)
