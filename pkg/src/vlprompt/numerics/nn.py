"""Parameter containers and the transformer pieces used by the prompter."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


class ConfigError(ValueError):
    pass


class Module:
    """Attribute-discovered parameter tree.

    Any attribute holding a :class:`Tensor`, a :class:`Module`,
    or a list of modules is part of the tree; names are dotted attribute paths
    in definition order.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, list) and value and isinstance(value[0], Module):
                for i, m in enumerate(value):
                    yield from m.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def set_parameters(self, tensors: list[Tensor]) -> None:
        """Replace parameter tensors, in ``named_parameters`` order."""
        names = [n for n, _ in self.named_parameters()]
        if len(names) != len(tensors):
            raise ConfigError(f"expected {len(names)} parameter tensors, got {len(tensors)}")
        for name, t in zip(names, tensors):
            *path, leaf = name.split(".")
            owner = self
            for part in path:
                owner = owner[int(part)] if isinstance(owner, list) else getattr(owner, part)
            if t.shape != getattr(owner, leaf).shape:
                raise ConfigError(f"{name}: shape {t.shape} does not match {getattr(owner, leaf).shape}")
            setattr(owner, leaf, t)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        """Cast every parameter in place (used by the float64 gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


def uniform_param(rng: np.random.Generator, shape, fan_in: int, name: str | None = None) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    data = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return Tensor(data, requires_grad=True, name=name)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = uniform_param(rng, (d_in, d_out), d_in)
        self.bias = uniform_param(rng, (d_out,), d_in) if bias else None
        self.d_in, self.d_out = d_in, d_out

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gamma = Tensor(np.ones(d, np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(d, np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta)


class MLP(Module):
    """Stack of linear layers with relu between them (none after the last)."""

    def __init__(self, widths: list[int], rng: np.random.Generator):
        self.layers = [Linear(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.relu(x)
        return x


def _split_heads(x: Tensor, heads: int) -> Tensor:
    # (..., T, D) -> (..., heads, T, D/heads)
    *lead, t, d = x.shape
    x = T.reshape(x, (*lead, t, heads, d // heads))
    return T.swapaxes(x, -3, -2)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, t, dh = x.shape
    x = T.swapaxes(x, -3, -2)
    return T.reshape(x, (*lead, t, h * dh))


class MultiheadAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if heads <= 0 or d % heads:
            raise ConfigError(f"model width {d} is not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.out = Linear(d, d, rng)

    def __call__(self, query: Tensor, key: Tensor, value: Tensor) -> Tensor:
        return multihead_cross_attention(query, key, value, self)


def multihead_cross_attention(query: Tensor, key: Tensor, value: Tensor, attn: MultiheadAttention) -> Tensor:
    """Scaled dot-product attention per head, heads concatenated then projected.

    Inputs are (..., T, D); leading axes are independent batch axes.
    """
    d = query.shape[-1]
    if key.shape[-1] != d or value.shape[-1] != d:
        raise ShapeError(f"attention: feature widths differ for shapes {query.shape}, {key.shape}, {value.shape}")
    if key.shape != value.shape:
        raise ShapeError(f"attention: key shape {key.shape} and value shape {value.shape} differ")
    if key.shape[-2] < 1:
        raise ShapeError("attention needs at least one key")
    h = attn.heads
    q = _split_heads(attn.q(query), h)
    k = _split_heads(attn.k(key), h)
    v = _split_heads(attn.v(value), h)
    scores = T.scale(T.matmul(q, T.swapaxes(k, -1, -2)), 1.0 / np.sqrt(d // h))
    ctx = T.matmul(T.softmax(scores), v)
    return attn.out(_merge_heads(ctx))


class DecoderBlock(Module):
    """Post-norm transformer decoder block: self-attn, cross-attn, FFN."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator, ffn_mult: int = 4):
        self.self_attn = MultiheadAttention(d, heads, rng)
        self.norm1 = LayerNorm(d)
        self.cross_attn = MultiheadAttention(d, heads, rng)
        self.norm2 = LayerNorm(d)
        self.ffn = MLP([d, ffn_mult * d, d], rng)
        self.norm3 = LayerNorm(d)

    def __call__(self, x: Tensor, memory: Tensor) -> Tensor:
        return transformer_decoder_block(x, memory, self)


def transformer_decoder_block(x: Tensor, memory: Tensor, block: DecoderBlock) -> Tensor:
    if x.shape[-1] != memory.shape[-1]:
        raise ShapeError(f"decoder block: query shape {x.shape} and memory shape {memory.shape} differ in width")
    x = block.norm1(T.add(x, block.self_attn(x, x, x)))
    x = block.norm2(T.add(x, block.cross_attn(x, memory, memory)))
    return block.norm3(T.add(x, block.ffn(x)))
