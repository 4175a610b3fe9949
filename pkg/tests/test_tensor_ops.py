import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vlprompt import numerics as nx
from vlprompt.numerics import ShapeError, Tape, Tensor, check

finite = st.floats(-20, 20, allow_nan=False, width=32)


def grad_of(fn, *arrays):
    ts = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = fn(*ts)
    tape.backward(out)
    return [t.grad for t in ts]


def test_matmul_identity(rng):
    a = rng.normal(size=(3, 4)).astype(np.float32)
    assert np.array_equal(nx.matmul(Tensor(a), Tensor(np.eye(4, dtype=np.float32))).data, a)


def test_softmax_uniform_and_sigmoid_zero():
    assert np.allclose(nx.softmax(Tensor(np.zeros(4))).data, 0.25)
    assert nx.sigmoid(Tensor(np.zeros(1))).data[0] == 0.5


def test_layer_norm_moments(rng):
    out = nx.layer_norm(Tensor(rng.normal(size=8) * 3 + 2)).data.astype(np.float64)
    assert abs(out.mean()) < 1e-6
    assert abs(out.var() - 1) < 1e-5


def test_mean_sigmoid_wx_gradient_matches_finite_differences(rng):
    w, x = rng.normal(size=(5, 4)), rng.normal(size=(4, 1))
    res = check("mean_sigmoid_Wx", lambda ts: nx.mean(nx.sigmoid(nx.matmul(ts[0], ts[1]))), [w, x])
    assert res.max_rel_error < 1e-4


def test_fan_out_accumulates_exactly():
    (g,) = grad_of(lambda x: nx.mean(nx.add(x, x)), np.array([1.5, -2.0], dtype=np.float32))
    # d/dx mean(x + x) = 2 / n
    assert np.array_equal(g, np.array([1.0, 1.0], dtype=np.float32))
    (g,) = grad_of(lambda x: nx.add(x, x), np.array(3.0, dtype=np.float32))
    assert g == 2.0


@pytest.mark.parametrize("op", [nx.add, nx.sub, nx.mul, nx.matmul])
def test_shape_mismatch_names_both_shapes(op):
    with pytest.raises(ShapeError) as err:
        op(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
    assert "(2, 3)" in str(err.value) and "(4, 5)" in str(err.value)


def test_concat_and_linear_mismatch():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 3\)"):
        nx.concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 3)))])
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        nx.linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


@pytest.mark.parametrize("op", [nx.softmax, nx.layer_norm, lambda x: nx.mean(x, axis=-1)])
def test_zero_length_axis_rejected(op):
    with pytest.raises(ShapeError):
        op(Tensor(np.zeros((3, 0))))


def test_no_tape_means_no_recording(rng):
    x = Tensor(rng.normal(size=3), requires_grad=True)
    with Tape() as tape:
        with nx.no_grad():
            nx.sigmoid(x)
        assert tape.nodes == []
        nx.sigmoid(x)
    assert len(tape.nodes) == 1


def test_each_recorded_op_visited_once():
    calls = []
    x = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        y = nx.sigmoid(x)
        z = nx.mean(nx.mul(y, y))
    for node in tape.nodes:
        inner = node.backward
        node.backward = lambda g, inner=inner, node=node: (calls.append(id(node)), inner(g))[1]
    tape.backward(z)
    assert len(calls) == len(set(calls)) == len(tape.nodes)


def test_deterministic_forward_and_backward(rng):
    w = rng.normal(size=(6, 5)).astype(np.float32)
    x = rng.normal(size=(4, 6)).astype(np.float32)
    runs = [grad_of(lambda a, b: nx.mean(nx.softmax(nx.matmul(a, b))), x, w) for _ in range(2)]
    assert all(np.array_equal(a, b) for a, b in zip(*runs))


def test_take_expand_swapaxes_shapes(rng):
    x = Tensor(rng.normal(size=(2, 3, 4)))
    assert nx.take(x, 1, axis=1).shape == (2, 4)
    assert nx.expand(x, (5,)).shape == (5, 2, 3, 4)
    assert nx.swapaxes(x, 0, 2).shape == (4, 3, 2)
    with pytest.raises(ShapeError):
        nx.reshape(x, (5, 5))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 5), st.integers(1, 7)), elements=finite))
def test_softmax_rows_sum_to_one(x):
    s = nx.softmax(Tensor(x)).data.astype(np.float64).sum(axis=-1)
    assert np.all(np.abs(s - 1) < 1e-6)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float32, st.integers(1, 20), elements=st.floats(-15, 15, width=32)))
def test_sigmoid_strictly_inside_unit_interval(x):
    s = nx.sigmoid(Tensor(x)).data
    assert np.all(s > 0) and np.all(s < 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_elementwise_gradients_random_instances(seed):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=(3, 4)), r.normal(size=(3, 4))
    for name, fn in [("mul", lambda ts: nx.mean(nx.mul(ts[0], ts[1]))),
                     ("softmax", lambda ts: nx.mean(nx.mul(nx.softmax(ts[0]), ts[1]))),
                     ("layer_norm", lambda ts: nx.mean(nx.mul(nx.layer_norm(ts[0]), ts[1])))]:
        assert check(name, fn, [a, b]).max_rel_error < 1e-4, name
