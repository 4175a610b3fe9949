"""Central finite differences in float64, compared against the tape."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor

STEP = 1e-4
TOLERANCE = 1e-4
# elements whose gradient is below this magnitude are compared absolutely
REL_FLOOR = 1e-6


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    checked: int

    @property
    def ok(self) -> bool:
        return self.max_rel_error < TOLERANCE


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def numeric_grad(fn: Callable[[list[Tensor]], Tensor], arrays: Sequence[np.ndarray], which: int,
                 coords: Sequence[tuple[int, ...]], step: float = STEP) -> np.ndarray:
    """d fn / d arrays[which] at ``coords`` by central differences, no tape involved."""
    work = [np.array(a, dtype=np.float64) for a in arrays]
    out = np.empty(len(coords))
    for n, idx in enumerate(coords):
        orig = work[which][idx]
        work[which][idx] = orig + step
        fp = float(fn([Tensor(a, dtype=np.float64) for a in work]).data)
        work[which][idx] = orig - step
        fm = float(fn([Tensor(a, dtype=np.float64) for a in work]).data)
        work[which][idx] = orig
        out[n] = (fp - fm) / (2 * step)
    return out


def analytic_grads(fn: Callable[[list[Tensor]], Tensor], arrays: Sequence[np.ndarray]) -> list[np.ndarray]:
    ts = [Tensor(np.array(a, dtype=np.float64), requires_grad=True, dtype=np.float64) for a in arrays]
    with Tape() as tape:
        loss = fn(ts)
    tape.backward(loss)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in ts]


def check(name: str, fn: Callable[[list[Tensor]], Tensor], arrays: Sequence[np.ndarray],
          rng: np.random.Generator | None = None, max_coords: int | None = None,
          step: float = STEP) -> GradCheckResult:
    """Compare tape gradients of scalar ``fn`` with finite differences.

    With ``max_coords`` set, each input is probed at that many randomly
    chosen elements instead of all of them.
    """
    rng = rng or np.random.default_rng(0)
    grads = analytic_grads(fn, arrays)
    worst, checked = 0.0, 0
    for i, (a, g) in enumerate(zip(arrays, grads)):
        a = np.asarray(a)
        all_idx = list(np.ndindex(a.shape))
        if max_coords is not None and len(all_idx) > max_coords:
            pick = rng.choice(len(all_idx), size=max_coords, replace=False)
            all_idx = [all_idx[j] for j in sorted(pick)]
        num = numeric_grad(fn, arrays, i, all_idx, step)
        ana = np.array([g[idx] for idx in all_idx])
        worst = max(worst, relative_error(ana, num))
        checked += len(all_idx)
    return GradCheckResult(name, worst, checked)
