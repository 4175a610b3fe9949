import json

import pytest

from vlprompt.config import RunConfig, config_from_dict, config_to_dict, load_config
from vlprompt.language import EndpointConfig
from vlprompt.numerics import ConfigError


def test_round_trip_with_endpoints(tmp_path):
    data = {
        "mode": "remote",
        "llm": {"url": "http://h/chat", "model": "chat-model", "api_key_env": "K"},
        "encoder": {"url": "http://h/emb", "model": "emb-model", "api_key_env": "K", "max_retries": 1},
        "model": {"d": 64, "heads": 8},
        "train": {"lr": 1e-3, "milestones": [5, 9]},
        "synth": {"num_scenes": 3, "params": {"num_categories": 5}},
    }
    (tmp_path / "c.json").write_text(json.dumps(data))
    cfg = load_config(tmp_path / "c.json")
    cfg.validate()
    assert cfg.llm == EndpointConfig("http://h/chat", "chat-model", "K")
    assert cfg.encoder.max_retries == 1 and cfg.model.heads == 8
    assert cfg.train.milestones == (5, 9) and cfg.synth.params.num_categories == 5
    again = config_from_dict(json.loads(json.dumps(config_to_dict(cfg))))
    assert again == cfg


def test_defaults_validate():
    RunConfig().validate()


@pytest.mark.parametrize("data", [
    {"mode": "cloud"},
    {"mode": "remote"},
    {"jobs": 0},
    {"rate_limit": 0},
    {"model": {"d": 0}},
    {"model": {"d": 10, "heads": 3}},
    {"train": {"lr": -1}},
    {"synth": {"params": {"num_objects": 1}}},
])
def test_invalid_values(data):
    with pytest.raises(ConfigError):
        config_from_dict(data).validate()


@pytest.mark.parametrize("data", [{"bogus": 1}, {"model": {"width": 3}}, {"llm": {"url": "u"}}, {"train": 5}])
def test_malformed_documents(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)
