import math

import numpy as np
import pytest

from vlprompt import numerics as nx
from vlprompt.numerics import AdamW, AdamWState, MissingGradError, StepSchedule, Tape, Tensor, adamw_step

EPS = nx.CLAMP_EPS


def scalar_bce(p, y, eps=EPS):
    total = 0.0
    for pi, yi in zip(np.ravel(p), np.ravel(y)):
        pi = min(max(float(pi), eps), 1 - eps)
        total += -(yi * math.log(pi) + (1 - yi) * math.log(1 - pi))
    return total / np.size(p)


def test_bce_perfect_prediction():
    y = np.array([[0, 1, 1], [1, 0, 0]], dtype=np.float32)
    assert nx.bce_multilabel(Tensor(y), y).item() <= EPS * abs(math.log(EPS))


def test_bce_half_is_ln2():
    y = np.array([[0, 1, 1, 0]], dtype=np.float32)
    assert abs(nx.bce_multilabel(Tensor(np.full((1, 4), 0.5)), y).item() - math.log(2)) < 1e-6


def test_bce_matches_scalar_loop(rng):
    p = rng.uniform(0.01, 0.99, size=(4, 6)).astype(np.float32)
    y = (rng.uniform(size=(4, 6)) < 0.5).astype(np.float32)
    assert abs(nx.bce_multilabel(Tensor(p), y).item() - scalar_bce(p, y)) < 1e-6


def test_bce_rejects_bad_targets_and_shapes():
    with pytest.raises(ValueError):
        nx.bce_multilabel(Tensor(np.full(3, 0.5)), np.array([0, 0.5, 1]))
    with pytest.raises(ValueError):
        nx.bce_multilabel(Tensor(np.full(3, 0.5)), np.array([0, 1]))


def quad_step(w, opt, a=None, b=None):
    opt.zero_grad()
    with Tape() as tape:
        if a is None:
            loss = nx.mul(w, w)
        else:
            d = nx.sub(w, Tensor(b))
            loss = nx.mean(nx.mul(Tensor(a), nx.mul(d, d)))
    tape.backward(nx.mean(loss) if loss.ndim else loss)
    opt.step()


def test_zero_grad_zero_decay_leaves_params():
    w = Tensor(np.array([1.0, -2.0], dtype=np.float32), requires_grad=True)
    opt = AdamW([w], lr=0.1, weight_decay=0.0)
    w.grad = np.zeros(2, dtype=np.float32)
    opt.step()
    assert np.array_equal(w.data, [1.0, -2.0])


def test_descent_direction():
    w = Tensor(np.array(1.0, dtype=np.float32), requires_grad=True)
    quad_step(w, AdamW([w], lr=0.1, weight_decay=0.0))
    assert w.data < 1.0


def test_convex_quadratic_converges_to_analytic_minimum(rng):
    a = rng.uniform(0.5, 2.0, size=5)
    b = rng.normal(size=5)  # minimiser of mean(a * (w - b)^2)
    w = Tensor(np.zeros(5), requires_grad=True, dtype=np.float64)
    # a short second-moment memory lets the step size shrink with the gradient
    opt = AdamW([w], lr=0.05, betas=(0.9, 0.99), weight_decay=0.0)
    for _ in range(200):
        quad_step(w, opt, a, b)
    assert np.max(np.abs(w.data - b)) < 1e-3


def test_decoupled_weight_decay_first_step():
    w = Tensor(np.array([2.0]), requires_grad=True, dtype=np.float64)
    state = AdamWState(lr=0.1, weight_decay=0.5)
    w.grad = np.array([0.0])
    adamw_step([w], state)
    assert np.isclose(w.data[0], 2.0 * (1 - 0.1 * 0.5))
    assert state.t == 1 and state.m[0].shape == w.shape


def test_missing_grad_rejected_by_name():
    w = Tensor(np.zeros(2), requires_grad=True, name="proj.weight")
    with pytest.raises(MissingGradError, match="proj.weight"):
        adamw_step([w], AdamWState())


def test_step_schedule():
    s = StepSchedule(1e-4, [6, 10], 0.1)
    assert [s.lr_at(e) for e in (0, 5, 6, 9, 10, 11)] == pytest.approx([1e-4, 1e-4, 1e-5, 1e-5, 1e-6, 1e-6])
    with pytest.raises(ValueError):
        StepSchedule(1e-4, [10, 6])
