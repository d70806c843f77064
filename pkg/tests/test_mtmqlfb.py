import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtlsi import oracles, verify
from mtlsi.linear_attention import naive_kernel_attend
from mtlsi.mtmqlfb import (MTMQLFB, TaskFeature, build_scale_features, build_shared_kv, fuse,
                           mtmqlfb_forward, pooled_tokens, scale_attend, shared_context)
from mtlsi.numerics import grad_check, ops

from .conftest import rel, t64


def block(T=2, d=8, scales=(1, 3, 5), heads=2, seed=0):
    return MTMQLFB(T, d, scales, heads, np.random.default_rng(seed), np.float64)


def feats(T, H, W, d, seed=0, scale=1.0):
    r = np.random.default_rng(seed)
    return [TaskFeature(f"t{i}", t64(r.normal(size=(H, W, d)) * scale)) for i in range(T)]


def test_unit_1x1_branch_subsamples():
    b = block(T=1, d=3, scales=(1,), heads=1)
    br = b.branches[0]
    br.kernels[0].data[...] = 1.0
    br.bns[0].eval()
    br.bns[0].running_var[...] = 1.0 - 1e-5  # BN becomes exactly the identity
    x = np.abs(np.random.default_rng(0).normal(size=(4, 6, 3)))
    g = build_scale_features([t64(x)], br).data
    assert np.allclose(g, x[::2, ::2].reshape(-1, 3), rtol=0, atol=1e-15)


def test_scale_feature_shape():
    b = block(T=2, d=3, heads=1)
    assert build_scale_features(feats(2, 4, 4, 3), b.branches[1]).shape == (8, 3)


def test_scale_features_match_composed_ops():
    b = block(T=2, d=4, seed=10)
    fs = feats(2, 6, 6, 4, seed=10)
    br = b.branches[1]
    g = build_scale_features(fs, br).data
    want = []
    for f, k, bn in zip(fs, br.kernels, br.bns):
        x = oracles.depthwise_conv_loops(f.tensor.data.transpose(2, 0, 1), k, 2, 1)
        want.append(np.maximum(oracles.batch_norm_ref(x, bn, 0), 0).transpose(1, 2, 0).reshape(-1, 4))
    assert rel(g, np.concatenate(want)) < 1e-13


def test_odd_extent_rejected():
    with pytest.raises(ValueError):
        mtmqlfb_forward(feats(2, 5, 4, 8), block())


def test_pooled_tokens_constant_and_single():
    fs = [t64(np.broadcast_to(np.arange(3.0) + t, (4, 4, 3))) for t in range(2)]
    m = pooled_tokens(fs).data
    assert np.array_equal(m[:4], np.tile(np.arange(3.0), (4, 1)))
    assert np.array_equal(m[4:], np.tile(np.arange(3.0) + 1, (4, 1)))
    assert pooled_tokens([t64(np.ones((2, 2, 3)))]).shape == (1, 3)


def test_shared_kv_matches_composed_oracle():
    b = block(T=3, d=8, seed=11)
    fs = feats(3, 4, 6, 8, seed=11)
    k, v = build_shared_kv(fs, b)
    pooled = [oracles.avg_pool_loops(f.tensor.data.transpose(2, 0, 1), 2, 2).transpose(1, 2, 0).reshape(-1, 8)
              for f in fs]
    m = oracles.layer_norm_ref(np.concatenate(pooled), b.kv_norm.gamma, b.kv_norm.beta)
    assert rel(k, oracles.linear_ref(m, b.key)) < 1e-13
    assert rel(v, oracles.linear_ref(m, b.value)) < 1e-13


def test_single_kv_token_returns_its_value():
    b = block(T=1, d=4, scales=(3,))
    fs = [t64(np.random.default_rng(1).normal(size=(2, 2, 4)))]
    k, v = build_shared_kv(fs, b)
    out = scale_attend(build_scale_features(fs, b.branches[0]), shared_context(k, v, 2), b.branches[0], 2)
    assert np.allclose(out.data, np.broadcast_to(v.data, out.shape), rtol=1e-13)


def test_scale_attend_matches_naive_path():
    b = block(T=2, d=8, scales=(3,), seed=12)
    fs = feats(2, 8, 8, 8, seed=12)
    k, v = build_shared_kv(fs, b)
    br = b.branches[0]
    g = build_scale_features(fs, br)
    out = scale_attend(g, shared_context(k, v, 2), br, 2).data
    q = br.query(br.norm(g)).data
    for h in range(2):
        sl = slice(4 * h, 4 * h + 4)
        ref = naive_kernel_attend(t64(q[:, sl]), t64(k.data[:, sl]), t64(v.data[:, sl])).data
        assert rel(out[:, sl], ref) <= 1e-10


def test_context_reuse_bitwise():
    assert verify.context_reuse_identical(3)


def test_fuse_identity_and_zero_cases():
    b = block(T=1, d=4, scales=(1,))
    b.out_proj.weight.data[...] = np.eye(4)
    for lin in (b.mlp.fc1, b.mlp.fc2):
        lin.weight.data[...] = 0
        lin.bias.data[...] = 0
    o = t64(np.random.default_rng(0).normal(size=(6, 4)))
    assert np.array_equal(fuse([o], b).data, o.data)
    b = block(T=1, d=4, scales=(1, 3))
    out = fuse([t64(np.zeros((3, 4)))] * 2, b).data
    bias_path = oracles.mlp_ref(np.zeros((3, 4)), b.mlp)
    assert np.allclose(out, bias_path, rtol=1e-14)


def test_fuse_matches_hand_composition():
    b = block(T=2, d=8, seed=13)
    r = np.random.default_rng(13)
    outs = [r.normal(size=(10, 8)) for _ in range(3)]
    agg = np.concatenate(outs, axis=1) @ b.out_proj.weight.data
    assert rel(fuse([t64(o) for o in outs], b), agg + oracles.mlp_ref(agg, b.mlp)) < 1e-13


def test_fuse_shape_mismatch():
    with pytest.raises(ValueError):
        fuse([t64(np.zeros((3, 8))), t64(np.zeros((4, 8)))], block())


def test_forward_shape_and_layout():
    out = mtmqlfb_forward(feats(2, 8, 8, 16), block(d=16, heads=4))
    assert out.shape == (32, 16)
    assert out.task_block(1).shape == (16, 16)


def test_identical_task_features_give_identical_blocks():
    b = block(T=2, d=8)
    for br in b.branches:
        br.kernels[1].data[...] = br.kernels[0].data
    f = feats(1, 8, 8, 8)[0]
    out = mtmqlfb_forward([f, f], b)
    assert np.array_equal(out.task_block(0).data, out.task_block(1).data)


@pytest.mark.parametrize("T,hw,d", [(1, 2, 4), (2, 8, 16), (4, 16, 16)])
def test_block_matches_quadratic_recomposition(T, hw, d):
    b = block(T=T, d=d, heads=2, seed=14)
    fs = feats(T, hw, hw, d, seed=14)
    assert rel(mtmqlfb_forward(fs, b).tensor, oracles.mtmqlfb_ref(fs, b)) <= 1e-9


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 4), st.sampled_from([2, 4, 6, 8]), st.sampled_from([(4, 1), (8, 2), (8, 4), (12, 3)]),
       st.sampled_from([(1,), (3,), (5,), (1, 3), (1, 3, 5)]), st.integers(0, 2**31))
def test_block_equivalence_property(T, hw, dh, scales, seed):
    d, heads = dh
    b = block(T=T, d=d, heads=heads, scales=scales, seed=seed)
    fs = feats(T, hw, hw, d, seed=seed, scale=2.0)
    assert rel(mtmqlfb_forward(fs, b).tensor, oracles.mtmqlfb_ref(fs, b)) <= 1e-9


def test_batched_matches_unbatched():
    b = block()
    r = np.random.default_rng(2)
    xs = [r.normal(size=(3, 4, 4, 8)) for _ in range(2)]
    for bn in (bn for br in b.branches for bn in br.bns):
        bn.eval()
    whole = mtmqlfb_forward([t64(x) for x in xs], b).tensor.data
    for i in range(3):
        one = mtmqlfb_forward([t64(x[i]) for x in xs], b).tensor.data
        assert rel(whole[i], one) < 1e-13


def test_gradient_check_params_and_inputs():
    assert verify.gradcheck_mtmqlfb(5) <= 1e-4
    b = block(T=2, d=8, seed=6)
    r = np.random.default_rng(6)
    xs = [t64(r.normal(size=(4, 4, 8)), grad=True) for _ in range(2)]
    w = t64(r.normal(size=(8, 8)))
    assert grad_check(lambda: ops.sum(mtmqlfb_forward(xs, b).tensor * w), xs) <= 1e-4
