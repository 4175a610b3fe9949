"""Vision-language prompter: projections, RP/RJ decoders and gated fusion."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import ConfigError, DecoderBlock, Linear, MLP, Module, ShapeError, Tensor
from .vision import VisionExtractor

BRANCHES = ("fused", "rp", "rj")


@dataclass(frozen=True)
class ModelConfig:
    d_map: int = 64
    d_v: int = 256
    d_l: int = 64
    d: int = 128
    heads: int = 4
    blocks: int = 2
    num_relations: int = 6

    def validate(self) -> None:
        for name in ("d_map", "d_v", "d_l", "d", "heads", "blocks", "num_relations"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d % self.heads:
            raise ConfigError(f"model width d={self.d} is not divisible by heads={self.heads}")


@dataclass
class PrompterOutput:
    r_rp: Tensor
    r_rj: Tensor
    w_rp: Tensor
    w_rj: Tensor
    r: Tensor


def decode(blocks: list[DecoderBlock], head: Linear, query: Tensor, memory: Tensor) -> Tensor:
    """Decoder blocks over ``query`` attending to ``memory``, then the head; returns logits."""
    x = query
    for block in blocks:
        x = block(x, memory)
    return head(x)


class Prompter(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        d, k = cfg.d, cfg.num_relations
        self.proj_v = Linear(cfg.d_v, d, rng)
        self.proj_rp = Linear(cfg.d_l, d, rng)
        self.proj_rj = Linear(cfg.d_l, d, rng)
        self.rp_blocks = [DecoderBlock(d, cfg.heads, rng) for _ in range(cfg.blocks)]
        self.rp_head = Linear(d, k, rng)
        self.rj_blocks = [DecoderBlock(d, cfg.heads, rng) for _ in range(cfg.blocks)]
        self.rj_head = Linear(d, 1, rng)
        self.gate = MLP([d, d, d, k], rng)

    def project(self, f_v: Tensor, f_rp: Tensor, f_rj: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        p = f_v.shape[0]
        if f_rp.shape[0] != p or f_rj.shape[0] != p:
            raise ShapeError(f"pair counts differ: vision {f_v.shape}, RP language {f_rp.shape}, "
                             f"RJ language {f_rj.shape}")
        if f_rj.ndim != 3 or f_rj.shape[1] != self.cfg.num_relations:
            raise ShapeError(f"RJ language features must be (P, {self.cfg.num_relations}, D_L), got {f_rj.shape}")
        return self.proj_v(f_v), self.proj_rp(f_rp), self.proj_rj(f_rj)

    def rp_decode(self, v: Tensor, l_rp: Tensor) -> Tensor:
        if v.shape != l_rp.shape:
            raise ShapeError(f"RP decoder: query {v.shape} and memory {l_rp.shape} must match")
        return nx.sigmoid(decode(self.rp_blocks, self.rp_head, v, l_rp))

    def rj_decode(self, v: Tensor, l_rj: Tensor) -> Tensor:
        """All K interactions at once: relation k is batch slice k, so slices never mix."""
        p, k, d = l_rj.shape
        if v.shape != (p, d):
            raise ShapeError(f"RJ decoder: query {v.shape} and memory {l_rj.shape} disagree")
        query = nx.expand(v, (k,))  # K x P x D
        memory = nx.swapaxes(l_rj, 0, 1)  # K x P x D
        logits = decode(self.rj_blocks, self.rj_head, query, memory)  # K x P x 1
        return nx.sigmoid(nx.swapaxes(nx.reshape(logits, (k, p)), 0, 1))

    def gate_logits(self, v: Tensor, l_rp: Tensor, l_rj: Tensor) -> tuple[Tensor, Tensor]:
        return self.gate(nx.add(v, l_rp)), self.gate(nx.add(v, nx.mean(l_rj, axis=1)))

    def __call__(self, f_v: Tensor, f_rp: Tensor, f_rj: Tensor, branch: str = "fused",
                 language: bool = True) -> PrompterOutput:
        """Full forward pass.

        ``branch`` "rp" or "rj" saturates the gate onto one decoder, and
        ``language=False`` feeds the projected vision features to both
        decoders in place of language features. Both exist for ablation-style
        tests.
        """
        if branch not in BRANCHES:
            raise ConfigError(f"branch must be one of {BRANCHES}, got {branch!r}")
        v, l_rp, l_rj = self.project(f_v, f_rp, f_rj)
        if not language:
            l_rp = v
            l_rj = nx.swapaxes(nx.expand(v, (self.cfg.num_relations,)), 0, 1)
        r_rp = self.rp_decode(v, l_rp)
        r_rj = self.rj_decode(v, l_rj)
        if branch == "fused":
            g_rp, g_rj = self.gate_logits(v, l_rp, l_rj)
        else:
            big = np.full(r_rp.shape, 1e4, dtype=r_rp.dtype)
            g_rp, g_rj = (Tensor(big), Tensor(-big)) if branch == "rp" else (Tensor(-big), Tensor(big))
        w_rp, w_rj, r = fuse(r_rp, r_rj, g_rp, g_rj)
        return PrompterOutput(r_rp, r_rj, w_rp, w_rj, r)


def fuse(r_rp: Tensor, r_rj: Tensor, logits_rp: Tensor, logits_rj: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Convex combination of the branch scores.

    The softmax over two logits ``(a, b)`` equals ``(sigmoid(a - b), sigmoid(b - a))``.
    """
    shapes = {r_rp.shape, r_rj.shape, logits_rp.shape, logits_rj.shape}
    if len(shapes) != 1:
        raise ShapeError(f"fuse: shapes differ {sorted(shapes)}")
    w_rp = nx.sigmoid(nx.sub(logits_rp, logits_rj))
    w_rj = nx.sigmoid(nx.sub(logits_rj, logits_rp))
    r = nx.add(nx.mul(w_rp, r_rp), nx.mul(w_rj, r_rj))
    return w_rp, w_rj, r


class RelationModel(Module):
    """Vision extractor and prompter trained jointly."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.vision = VisionExtractor(cfg.d_map, cfg.d_v, rng)
        self.prompter = Prompter(cfg, rng)

    def __call__(self, concat: Tensor, spatial: Tensor, f_rp: Tensor, f_rj: Tensor, **kw) -> PrompterOutput:
        _, f_v = self.vision(concat, spatial)
        return self.prompter(f_v, f_rp, f_rj, **kw)
