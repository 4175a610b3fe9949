"""Run configuration: one JSON document, with command-line overrides applied on top."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

from .language.backends import EndpointConfig
from .numerics import ConfigError
from .prompter import ModelConfig
from .scene import Vocabulary
from .synth import SynthError, SynthParams
from .train import TrainConfig

MODES = ("mock", "remote")


@dataclass
class ModelDims:
    d_map: int = 64
    d_v: int = 256
    d_l: int = 64
    d: int = 128
    heads: int = 4
    blocks: int = 2

    def model_config(self, num_relations: int) -> ModelConfig:
        cfg = ModelConfig(num_relations=num_relations, **asdict(self))
        cfg.validate()
        return cfg


@dataclass
class SynthSettings:
    num_scenes: int = 32
    first_seed: int = 0
    params: SynthParams = field(default_factory=SynthParams)


@dataclass
class RunConfig:
    vocabulary: str | None = None
    scene_dir: str = "scenes"
    db_rp: str = "db/rp.jsonl"
    db_rj: str = "db/rj.jsonl"
    knowledge: str | None = None
    checkpoint: str = "out/checkpoint"
    train_log: str = "out/train_log.jsonl"
    metrics: str = "out/metrics.json"
    predictions: str = "out/predictions.json"
    mode: str = "mock"
    mock_seed: int = 0
    llm: EndpointConfig | None = None
    encoder: EndpointConfig | None = None
    llama: bool = False
    same_category: bool = False
    jobs: int = 1
    rate_limit: float | None = None
    seed: int = 0
    model: ModelDims = field(default_factory=ModelDims)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthSettings = field(default_factory=SynthSettings)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "remote":
            for label, ep in (("llm", self.llm), ("encoder", self.encoder)):
                if ep is None or not ep.url or not ep.api_key_env:
                    raise ConfigError(f"remote mode needs {label}.url and {label}.api_key_env")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        if self.rate_limit is not None and self.rate_limit <= 0:
            raise ConfigError("rate_limit must be positive")
        for f in fields(ModelDims):
            if getattr(self.model, f.name) < 1:
                raise ConfigError(f"model.{f.name} must be positive")
        if self.model.d % self.model.heads:
            raise ConfigError(f"model.d={self.model.d} is not divisible by model.heads={self.model.heads}")
        if self.synth.num_scenes < 1:
            raise ConfigError("synth.num_scenes must be positive")
        try:
            self.synth.params.validate()
        except SynthError as e:
            raise ConfigError(f"synth.params: {e}") from None
        self.train.validate()

    def load_vocabulary(self) -> Vocabulary:
        """The configured vocabulary, else the scene directory's, else the bundled demo one."""
        if self.vocabulary:
            return Vocabulary.load(self.vocabulary)
        local = Path(self.scene_dir) / "vocabulary.json"
        if local.is_file():
            return Vocabulary.load(local)
        return demo_vocabulary()


def demo_vocabulary() -> Vocabulary:
    text = resources.files("vlprompt").joinpath("data/demo_vocabulary.json").read_text()
    return Vocabulary.from_json(json.loads(text))


# (owner, field) -> dataclass the JSON object is parsed into
_NESTED = {
    ("RunConfig", "model"): ModelDims,
    ("RunConfig", "train"): TrainConfig,
    ("RunConfig", "synth"): SynthSettings,
    ("RunConfig", "llm"): EndpointConfig,
    ("RunConfig", "encoder"): EndpointConfig,
    ("SynthSettings", "params"): SynthParams,
}


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config field(s) {', '.join(where + k for k in unknown)}")
    kwargs = {}
    for key, value in data.items():
        sub = _NESTED.get((cls.__name__, key))
        if sub is not None and value is not None:
            value = _build(sub, value, f"{where}{key}.")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"{where or 'config'}: {e}") from None


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "")


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
    return config_from_dict(data)


def config_to_dict(cfg: RunConfig) -> dict:
    return asdict(cfg)
