"""Finite-difference checks over every differentiable op and composed module.

Each check reduces its output to a scalar with a fixed random weighting, so
every output element contributes a distinct gradient.
"""
from __future__ import annotations

import time
from typing import Callable

import numpy as np

from . import numerics as nx
from .numerics import DecoderBlock, GradCheckResult, Module, MultiheadAttention, Tensor, check
from .prompter import ModelConfig, Prompter
from .train import relation_loss
from .vision import VisionExtractor


def _weighted(out: Tensor, rng_seed: int = 99) -> Tensor:
    w = np.random.default_rng(rng_seed).normal(size=out.shape)
    return nx.mean(nx.mul(out, Tensor(w, dtype=out.dtype)))


def _op(fn: Callable[..., Tensor]) -> Callable[[list[Tensor]], Tensor]:
    return lambda ts: _weighted(fn(*ts))


def _module_fn(module: Module, n_inputs: int, body: Callable[..., Tensor]) -> Callable[[list[Tensor]], Tensor]:
    def fn(ts: list[Tensor]) -> Tensor:
        module.set_parameters(ts[n_inputs:])
        return _weighted(body(*ts[:n_inputs]))
    return fn


def _module_arrays(module: Module, inputs: list[np.ndarray]) -> list[np.ndarray]:
    module.astype(np.float64)
    return [*inputs, *(p.data.copy() for p in module.parameters())]


def op_checks(rng: np.random.Generator) -> list[tuple[str, Callable, list[np.ndarray]]]:
    r = rng.normal
    away = lambda shape: np.sign(r(size=shape)) * rng.uniform(0.1, 1.0, size=shape)  # keep relu off its kink
    bce_target = (r(size=(4, 6)) > 0).astype(np.float64)
    return [
        ("add", _op(nx.add), [r(size=(3, 4)), r(size=(3, 4))]),
        ("add_broadcast", _op(nx.add), [r(size=(2, 3, 4)), r(size=(4,))]),
        ("sub", _op(nx.sub), [r(size=(3, 4)), r(size=(3, 4))]),
        ("mul", _op(nx.mul), [r(size=(3, 4)), r(size=(3, 4))]),
        ("scale", _op(lambda x: nx.scale(x, 0.7)), [r(size=(5,))]),
        ("matmul", _op(nx.matmul), [r(size=(3, 4)), r(size=(4, 2))]),
        ("matmul_batched", _op(nx.matmul), [r(size=(2, 3, 4)), r(size=(2, 4, 5))]),
        ("linear", _op(nx.linear), [r(size=(2, 3, 4)), r(size=(4, 5)), r(size=(5,))]),
        ("concat", _op(lambda a, b: nx.concat([a, b])), [r(size=(3, 2)), r(size=(3, 4))]),
        ("mean_axis0", _op(lambda x: nx.mean(x, axis=0)), [r(size=(3, 4))]),
        ("mean_axis1", _op(lambda x: nx.mean(x, axis=1)), [r(size=(2, 3, 4))]),
        ("mean_all", lambda ts: nx.mean(ts[0]), [r(size=(3, 4))]),
        ("softmax", _op(nx.softmax), [r(size=(3, 5))]),
        ("layer_norm", _op(nx.layer_norm), [r(size=(3, 6))]),
        ("layer_norm_affine", _op(nx.layer_norm), [r(size=(2, 3, 6)), r(size=(6,)), r(size=(6,))]),
        ("sigmoid", _op(nx.sigmoid), [3 * r(size=(3, 4))]),
        ("relu", _op(nx.relu), [away((3, 4))]),
        ("reshape", _op(lambda x: nx.reshape(x, (4, 3))), [r(size=(3, 4))]),
        ("swapaxes", _op(lambda x: nx.swapaxes(x, 0, 2)), [r(size=(2, 3, 4))]),
        ("expand", _op(lambda x: nx.expand(x, (3,))), [r(size=(2, 4))]),
        ("take", _op(lambda x: nx.take(x, 1, axis=1)), [r(size=(2, 3, 4))]),
        ("bce", lambda ts: nx.bce_multilabel(nx.sigmoid(ts[0]), bce_target), [r(size=(4, 6))]),
        ("mean_sigmoid_Wx", lambda ts: nx.mean(nx.sigmoid(nx.matmul(ts[0], ts[1]))),
         [r(size=(5, 4)), r(size=(4, 1))]),
    ]


def module_checks(rng: np.random.Generator) -> list[tuple[str, Callable, list[np.ndarray]]]:
    out = []
    attn = MultiheadAttention(8, 2, np.random.default_rng(1))
    arrays = _module_arrays(attn, [rng.normal(size=(3, 8)), rng.normal(size=(5, 8))])
    out.append(("cross_attention", _module_fn(attn, 2, lambda q, m: attn(q, m, m)), arrays))

    block = DecoderBlock(8, 2, np.random.default_rng(2))
    arrays = _module_arrays(block, [rng.normal(size=(3, 8)), rng.normal(size=(5, 8))])
    out.append(("decoder_block", _module_fn(block, 2, block), arrays))

    vis = VisionExtractor(4, 8, np.random.default_rng(3))
    arrays = _module_arrays(vis, [rng.normal(size=(6, 8)), rng.normal(size=(6, 6))])
    out.append(("vision_extractor", _module_fn(vis, 2, lambda c, s: vis(c, s)[1]), arrays))

    cfg = ModelConfig(d_map=4, d_v=8, d_l=6, d=8, heads=2, num_relations=3)
    p = 6  # N = 3 objects
    prom = Prompter(cfg, np.random.default_rng(4))
    inputs = [rng.normal(size=(p, 8)), rng.normal(size=(p, 6)), rng.normal(size=(p, 3, 6))]
    arrays = _module_arrays(prom, inputs)
    targets = (rng.uniform(size=(p, 3)) < 0.4).astype(np.float64)

    def prompter_loss(fv, frp, frj):
        o = prom(fv, frp, frj)
        return nx.concat([o.r_rp, o.r_rj, o.w_rp, o.w_rj, o.r])

    out.append(("prompter_forward", _module_fn(prom, 3, prompter_loss), arrays))

    def loss_fn(ts):
        prom.set_parameters(ts[3:])
        return relation_loss(prom(*ts[:3]), targets)

    out.append(("prompter_relation_loss", loss_fn, arrays))
    return out


def run_suite(seed: int = 0, max_coords: int | None = 12, verbose: Callable[[str], None] | None = None
              ) -> list[GradCheckResult]:
    """Run every check; module checks probe ``max_coords`` random elements per tensor."""
    rng = np.random.default_rng(seed)
    results = []
    for name, fn, arrays in op_checks(rng):
        results.append(check(name, fn, arrays))
    for name, fn, arrays in module_checks(rng):
        start = time.perf_counter()
        results.append(check(name, fn, arrays, rng=np.random.default_rng(seed + 7), max_coords=max_coords))
        if verbose:
            verbose(f"{name}: {time.perf_counter() - start:.1f}s")
    return results
