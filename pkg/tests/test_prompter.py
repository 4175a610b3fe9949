import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vlprompt import numerics as nx
from vlprompt.numerics import ConfigError, ShapeError, Tensor, check
from vlprompt.prompter import ModelConfig, Prompter, decode, fuse

SMALL = ModelConfig(d_map=4, d_v=12, d_l=10, d=16, heads=4, num_relations=5)


def inputs(rng, cfg, p):
    return (Tensor(rng.normal(size=(p, cfg.d_v))), Tensor(rng.normal(size=(p, cfg.d_l))),
            Tensor(rng.normal(size=(p, cfg.num_relations, cfg.d_l))))


@pytest.fixture
def prom():
    return Prompter(SMALL, np.random.default_rng(7))


def test_output_contract(prom, rng):
    out = prom(*inputs(rng, SMALL, 12))
    for name in ("r_rp", "r_rj", "w_rp", "w_rj", "r"):
        t = getattr(out, name)
        assert t.shape == (12, 5), name
        assert np.all((t.data > 0) & (t.data < 1)), name
    assert np.allclose(out.w_rp.data + out.w_rj.data, 1.0, atol=1e-6)


def test_duplicated_token_rows_equal(prom, rng):
    v = rng.normal(size=(1, SMALL.d))
    l = rng.normal(size=(1, SMALL.d))
    r = prom.rp_decode(Tensor(np.repeat(v, 2, 0)), Tensor(np.repeat(l, 2, 0))).data
    assert r.shape == (2, 5) and np.max(np.abs(r[0] - r[1])) < 1e-6


def test_rp_decode_gradcheck(rng):
    cfg = ModelConfig(d_v=8, d_l=8, d=8, heads=2, num_relations=3)
    prom = Prompter(cfg, np.random.default_rng(3)).astype(np.float64)
    blocks_and_head = [*prom.rp_blocks, prom.rp_head]
    params = [p for m in blocks_and_head for p in m.parameters()]
    weights = rng.normal(size=(2, 3))

    def fn(ts):
        v, l, *ps = ts
        i = 0
        for m in blocks_and_head:
            n = len(m.parameters())
            m.set_parameters(ps[i:i + n])
            i += n
        return nx.mean(nx.mul(prom.rp_decode(v, l), Tensor(weights, dtype=np.float64)))

    arrays = [rng.normal(size=(2, 8)), rng.normal(size=(2, 8)), *(p.data.copy() for p in params)]
    result = check("rp_decode", fn, arrays)
    assert result.ok, result.max_rel_error


def test_rj_column_independence_exact(prom, rng):
    v = Tensor(rng.normal(size=(6, SMALL.d)))
    l = rng.normal(size=(6, 5, SMALL.d)).astype(np.float32)
    base = prom.rj_decode(v, Tensor(l)).data
    for k in range(5):
        moved = l.copy()
        moved[:, k, :] += rng.normal(size=(6, SMALL.d)).astype(np.float32)
        out = prom.rj_decode(v, Tensor(moved)).data
        others = [c for c in range(5) if c != k]
        assert np.array_equal(out[:, others], base[:, others])
        assert not np.array_equal(out[:, k], base[:, k])


def test_rj_single_relation_matches_single_memory_decode(rng):
    cfg = ModelConfig(d_v=8, d_l=8, d=16, heads=4, num_relations=1)
    prom = Prompter(cfg, np.random.default_rng(11))
    v = Tensor(rng.normal(size=(6, 16)))
    l = rng.normal(size=(6, 1, 16))
    rj = prom.rj_decode(v, Tensor(l)).data
    ref = nx.sigmoid(decode(prom.rj_blocks, prom.rj_head, v, Tensor(l[:, 0, :]))).data
    assert rj.shape == (6, 1) and np.max(np.abs(rj - ref)) < 1e-6


def test_fuse_saturated_gate(rng):
    r_rp, r_rj = (Tensor(rng.uniform(0.01, 0.99, size=(6, 4))) for _ in range(2))
    big = np.full((6, 4), 1e4)
    _, _, r = fuse(r_rp, r_rj, Tensor(big), Tensor(-big))
    assert np.max(np.abs(r.data - r_rp.data)) < 1e-6
    _, _, r = fuse(r_rp, r_rj, Tensor(-big), Tensor(big))
    assert np.max(np.abs(r.data - r_rj.data)) < 1e-6


def test_fuse_equal_logits(rng):
    r_rp, r_rj = (Tensor(rng.uniform(size=(3, 4))) for _ in range(2))
    g = Tensor(rng.normal(size=(3, 4)))
    w_rp, w_rj, r = fuse(r_rp, r_rj, g, g)
    assert np.all(w_rp.data == 0.5) and np.all(w_rj.data == 0.5)
    assert np.allclose(r.data, (r_rp.data + r_rj.data) / 2, atol=1e-7)


def test_fuse_convex_bound_random_instances(rng):
    for _ in range(1000):
        shape = tuple(rng.integers(1, 6, size=2))
        r_rp, r_rj = rng.uniform(size=shape), rng.uniform(size=shape)
        a, b = rng.normal(scale=5, size=shape), rng.normal(scale=5, size=shape)
        _, _, r = fuse(Tensor(r_rp), Tensor(r_rj), Tensor(a), Tensor(b))
        lo, hi = np.minimum(r_rp, r_rj), np.maximum(r_rp, r_rj)
        assert np.all(r.data >= lo - 1e-7) and np.all(r.data <= hi + 1e-7)


def test_fuse_shape_mismatch():
    x = Tensor(np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        fuse(x, x, x, Tensor(np.zeros((2, 4))))


@settings(max_examples=15, deadline=None)
@given(n=st.integers(2, 4), k=st.integers(1, 4), d_v=st.integers(1, 9), d_l=st.integers(1, 9),
       heads=st.sampled_from([1, 2, 4]), seed=st.integers(0, 2**16))
def test_random_dims_shape_contract(n, k, d_v, d_l, heads, seed):
    cfg = ModelConfig(d_v=d_v, d_l=d_l, d=4 * heads, heads=heads, num_relations=k)
    rng = np.random.default_rng(seed)
    out = Prompter(cfg, rng)(*inputs(rng, cfg, n * (n - 1)))
    assert out.r.shape == out.r_rp.shape == out.r_rj.shape == (n * (n - 1), k)


def test_degenerate_forward_has_no_relation_specific_path(rng):
    prom = Prompter(SMALL, np.random.default_rng(5))
    for name, p in prom.named_parameters():
        if name.endswith(("bias", "beta")):
            p.data[...] = 0
    f_v, _, _ = inputs(rng, SMALL, 6)
    zeros_rp, zeros_rj = Tensor(np.zeros((6, SMALL.d_l))), Tensor(np.zeros((6, 5, SMALL.d_l)))
    out = prom(f_v, zeros_rp, zeros_rj)
    # trace: logits are h @ W_head with h independent of the relation index
    v = prom.proj_v(f_v)
    h = v
    for block in prom.rp_blocks:
        h = block(h, Tensor(np.zeros((6, SMALL.d))))
    logits = h.data @ prom.rp_head.weight.data
    assert np.max(np.abs(out.r_rp.data - 1 / (1 + np.exp(-logits)))) < 1e-6
    # tying the head columns makes every relation column identical
    w = prom.rp_head.weight.data
    w[...] = w[:, :1]
    r_rp = prom(f_v, zeros_rp, zeros_rj).r_rp.data
    assert all(np.array_equal(r_rp[:, 0], r_rp[:, c]) for c in range(5))


def test_permutation_equivariance(prom, rng):
    f_v, f_rp, f_rj = inputs(rng, SMALL, 12)
    perm = rng.permutation(12)
    a = prom(f_v, f_rp, f_rj)
    b = prom(Tensor(f_v.data[perm]), Tensor(f_rp.data[perm]), Tensor(f_rj.data[perm]))
    for name in ("r_rp", "r_rj", "w_rp", "w_rj", "r"):
        assert np.max(np.abs(getattr(b, name).data - getattr(a, name).data[perm])) < 1e-6, name


def test_token_count_mismatch_rejected(prom, rng):
    f_v, f_rp, f_rj = inputs(rng, SMALL, 6)
    with pytest.raises(ShapeError):
        prom(f_v, Tensor(f_rp.data[:5]), f_rj)
    with pytest.raises(ShapeError):
        prom(f_v, f_rp, Tensor(f_rj.data[:, :4]))
    with pytest.raises(ShapeError):
        prom.rp_decode(Tensor(np.zeros((3, 16))), Tensor(np.zeros((2, 16))))
    with pytest.raises(ShapeError):
        prom.rj_decode(Tensor(np.zeros((3, 16))), Tensor(np.zeros((2, 5, 16))))


@pytest.mark.parametrize("branch,field", [("rp", "r_rp"), ("rj", "r_rj")])
def test_single_branch_configurations(prom, rng, branch, field):
    out = prom(*inputs(rng, SMALL, 6), branch=branch)
    assert np.max(np.abs(out.r.data - getattr(out, field).data)) < 1e-6


def test_vision_only_configuration(prom, rng):
    f_v, f_rp, f_rj = inputs(rng, SMALL, 6)
    a = prom(f_v, f_rp, f_rj, language=False)
    b = prom(f_v, Tensor(rng.normal(size=f_rp.shape)), Tensor(rng.normal(size=f_rj.shape)), language=False)
    assert np.array_equal(a.r.data, b.r.data)
    assert not np.array_equal(a.r.data, prom(f_v, f_rp, f_rj).r.data)


def test_config_validation(prom, rng):
    with pytest.raises(ConfigError):
        Prompter(ModelConfig(d=10, heads=4), rng)
    with pytest.raises(ConfigError):
        ModelConfig(num_relations=0).validate()
    with pytest.raises(ConfigError):
        prom(*inputs(rng, SMALL, 2), branch="both")
