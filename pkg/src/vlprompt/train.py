"""Relation loss, the training loop and evaluation over prepared scenes."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .language.featuredb import FeatureDB, MissingKeyError, retrieve, rj_key, rp_key
from .metrics import DEFAULT_KS, aggregate, match_and_score, predict_triplets, relation_targets
from .numerics import AdamW, ConfigError, StepSchedule, Tape, Tensor
from .prompter import ModelConfig, PrompterOutput, RelationModel
from .scene import Scene, Vocabulary
from .vision import pair_index, pair_inputs

log = logging.getLogger(__name__)


def relation_loss(out: PrompterOutput, targets) -> Tensor:
    """Sum of the multi-label BCE on both branch outputs and the fused output."""
    y = targets.data if isinstance(targets, Tensor) else np.asarray(targets)
    return nx.add(nx.add(nx.bce_multilabel(out.r_rp, y), nx.bce_multilabel(out.r_rj, y)),
                  nx.bce_multilabel(out.r, y))


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 5e-2
    steps: int = 1000
    milestones: tuple[int, ...] = ()
    gamma: float = 0.1
    seed: int = 0
    batch_size: int = 1
    # weight of the segmentation term; kept for the record, no segmentation loss is computed
    lam: float = 0.1

    def __post_init__(self):
        self.milestones = tuple(int(m) for m in self.milestones)

    def validate(self) -> None:
        if self.lr <= 0 or self.steps <= 0 or self.batch_size <= 0:
            raise ConfigError(f"lr, steps and batch_size must be positive (lr={self.lr}, steps={self.steps}, "
                              f"batch_size={self.batch_size})")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        ms = self.milestones
        if any(m <= 0 for m in ms) or any(b <= a for a, b in zip(ms, ms[1:])):
            raise ConfigError(f"milestones must be positive and strictly increasing, got {list(ms)}")


@dataclass
class Example:
    """Everything the model needs for one scene, independent of the weights."""

    scene: Scene
    concat: np.ndarray
    spatial: np.ndarray
    f_rp: np.ndarray
    f_rj: np.ndarray
    targets: np.ndarray


def missing_keys(scenes, db_rp: FeatureDB, db_rj: FeatureDB, vocabulary: Vocabulary) -> list[str]:
    out: dict[str, None] = {}
    for scene in scenes:
        names = [vocabulary.object_names[c] for c in scene.categories]
        for i, j in pair_index(len(names)):
            out.update({k: None for k in [rp_key(names[i], names[j])] if k not in db_rp})
            out.update({k: None for k in (rj_key(names[i], r, names[j]) for r in vocabulary.relation_names)
                        if k not in db_rj})
    return list(out)


def prepare_examples(scenes, db_rp: FeatureDB, db_rj: FeatureDB, vocabulary: Vocabulary) -> list[Example]:
    """Precompute per-scene inputs; every missing DB key is reported before any work starts."""
    scenes = list(scenes)
    missing = missing_keys(scenes, db_rp, db_rj, vocabulary)
    if missing:
        raise MissingKeyError(missing)
    out = []
    for scene in scenes:
        if scene.num_relations != vocabulary.num_relations:
            raise ConfigError(f"scene has K={scene.num_relations}, vocabulary has K={vocabulary.num_relations}")
        inp = pair_inputs(scene)
        f_rp, f_rj = retrieve(db_rp, db_rj, scene.categories, vocabulary)
        out.append(Example(scene, inp.concat, inp.spatial, f_rp, f_rj, relation_targets(scene)))
    return out


def forward(model: RelationModel, ex: Example, **kw) -> PrompterOutput:
    return model(Tensor(ex.concat), Tensor(ex.spatial), Tensor(ex.f_rp), Tensor(ex.f_rj), **kw)


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    seconds: float = 0.0


def train(model: RelationModel, examples: list[Example], cfg: TrainConfig, log_path=None) -> TrainResult:
    """AdamW over every model weight with a step-decay schedule.

    Each step draws ``batch_size`` scenes from a seeded per-epoch shuffle and
    averages their losses. The log gets one ``{step, loss, lr}`` JSON line per
    step.
    """
    cfg.validate()
    if not examples:
        raise ConfigError("no training scenes")
    params = model.parameters()
    for p in params:
        p.requires_grad = True
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    sched = StepSchedule(cfg.lr, list(cfg.milestones), cfg.gamma)
    rng = np.random.default_rng(cfg.seed)
    order: list[int] = []
    result = TrainResult()
    sink = open(log_path, "w") if log_path is not None else None
    start = time.perf_counter()
    try:
        for step in range(cfg.steps):
            batch = []
            while len(batch) < cfg.batch_size:
                if not order:
                    order = [int(i) for i in rng.permutation(len(examples))]
                batch.append(order.pop(0))
            lr = sched.lr_at(step)
            opt.state.lr = lr
            opt.zero_grad()
            with Tape() as tape:
                losses = [relation_loss(forward(model, examples[i]), examples[i].targets) for i in batch]
                total = losses[0]
                for extra in losses[1:]:
                    total = nx.add(total, extra)
                loss = nx.scale(total, 1.0 / len(batch))
            tape.backward(loss)
            opt.step()
            value = float(loss.data)
            if not np.isfinite(value):
                raise FloatingPointError(f"loss became {value} at step {step}")
            result.losses.append(value)
            result.lrs.append(lr)
            if sink is not None:
                sink.write(json.dumps({"step": step, "loss": value, "lr": lr}) + "\n")
    finally:
        if sink is not None:
            sink.close()
    result.seconds = time.perf_counter() - start
    return result


def predict_scene(model: RelationModel, ex: Example):
    with nx.no_grad():
        out = forward(model, ex)
    return predict_triplets(out.r.data, ex.scene.num_objects), out


def evaluate(model: RelationModel, examples: list[Example], vocabulary: Vocabulary, ks=DEFAULT_KS) -> dict:
    results = [match_and_score(predict_scene(model, ex)[0], ex.scene, ks) for ex in examples]
    return aggregate(results, vocabulary.relation_names, ks)


# ------------------------------------------------------------------ checkpoints

def save_model(path, model: RelationModel, extra: dict | None = None) -> None:
    meta = {"model": asdict(model.cfg), **(extra or {})}
    nx.save_checkpoint(path, {name: p.data for name, p in model.named_parameters()}, meta)


def load_model(path) -> tuple[RelationModel, dict]:
    params, meta = nx.load_checkpoint(path)
    if "model" not in meta:
        raise nx.CheckpointError(f"{path}: checkpoint lacks model configuration")
    cfg = ModelConfig(**meta["model"])
    model = RelationModel(cfg)
    names = [n for n, _ in model.named_parameters()]
    if sorted(names) != sorted(params):
        raise nx.CheckpointError(f"{path}: parameter names do not match the model configuration")
    for name, p in model.named_parameters():
        if params[name].shape != p.shape:
            raise nx.CheckpointError(f"{path}: {name} has shape {params[name].shape}, model expects {p.shape}")
        p.data = params[name].astype(np.float32)
    extra = {k: v for k, v in meta.items() if k != "model"}
    return model, extra


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
