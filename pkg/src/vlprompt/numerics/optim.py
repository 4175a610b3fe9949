from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


class MissingGradError(RuntimeError):
    pass


@dataclass
class AdamWState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 5e-2
    t: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


class AdamW:
    """Adam with decoupled weight decay.

    Moment buffers are keyed by parameter position, so the parameter list
    must keep its order between steps.
    """

    def __init__(self, params: list[Tensor], lr: float = 1e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 5e-2):
        self.params = list(params)
        self.state = AdamWState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adamw_step(self.params, self.state)


def adamw_step(params: list[Tensor], state: AdamWState) -> None:
    missing = [p.name or f"param[{i}]" for i, p in enumerate(params) if p.grad is None]
    if missing:
        raise MissingGradError(f"no gradient for parameter(s): {', '.join(missing)}")
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    bc1 = 1 - b1 ** t
    bc2 = 1 - b2 ** t
    for i, p in enumerate(params):
        g = p.grad.astype(p.dtype, copy=False)
        if i not in state.m:
            state.m[i] = np.zeros_like(p.data)
            state.v[i] = np.zeros_like(p.data)
        m, v = state.m[i], state.v[i]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        if state.weight_decay:
            p.data *= p.dtype.type(1 - state.lr * state.weight_decay)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.data -= (state.lr * update).astype(p.dtype, copy=False)


class StepSchedule:
    """Multiply the base rate by ``gamma`` at every milestone step passed."""

    def __init__(self, base_lr: float, milestones: list[int], gamma: float = 0.1):
        if any(b <= a for a, b in zip(milestones, milestones[1:])):
            raise ValueError(f"milestones must be strictly increasing, got {milestones}")
        self.base_lr = base_lr
        self.milestones = list(milestones)
        self.gamma = gamma

    def lr_at(self, step: int) -> float:
        return self.base_lr * self.gamma ** bisect_right(self.milestones, step)
