from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, _make

CLAMP_EPS = 1e-7


def bce_multilabel(pred: Tensor, target, eps: float = CLAMP_EPS) -> Tensor:
    """Mean binary cross-entropy over every element.

    ``pred`` is clamped to ``[eps, 1 - eps]``; clamped elements get zero
    gradient. ``target`` must be 0/1 valued and is never differentiated.
    """
    y = target.data if isinstance(target, Tensor) else np.asarray(target)
    if y.shape != pred.shape:
        raise ShapeError(f"bce: prediction shape {pred.shape} and target shape {y.shape} differ")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("bce: target values must be 0 or 1")
    y = y.astype(pred.dtype)
    lo, hi = pred.dtype.type(eps), pred.dtype.type(1 - eps)
    p = np.clip(pred.data, lo, hi)
    n = p.size
    loss = -(y * np.log(p) + (1 - y) * np.log1p(-p)).mean(dtype=np.float64)
    inside = (pred.data >= lo) & (pred.data <= hi)

    def backward(g):
        return (g * inside * (p - y) / (p * (1 - p)) / n,)

    return _make(np.asarray(loss, dtype=pred.dtype), (pred,), backward)
