import itertools

import numpy as np
import pytest

from ptmatch import dap
from ptmatch import diffkernel as dk
from ptmatch.dap import DapConfig, DapParams, TokenFeatures
from ptmatch.errors import ConfigurationError


def _params(d_f=5, d_c=4, seed=0, key_scale=0.5):
    rng = np.random.default_rng(seed)
    p = DapParams.init(d_f, d_f, d_c, rng)
    for n in p.names():
        if "key" in n or n.endswith("b_Q") or n.endswith("b_V"):
            p.arrays[n] = rng.normal(0.0, key_scale, size=p.arrays[n].shape)
    return p


def _zero_keys(p):
    q = p.copy()
    for n in q.names():
        if "key" in n:
            q.arrays[n] = np.zeros_like(q.arrays[n])
    return q


def test_project_identity_and_zero():
    Z = np.random.default_rng(0).normal(size=(3, 4))
    Q, V = dap.project(Z, np.eye(4), np.zeros(4), np.eye(4), np.zeros(4))
    np.testing.assert_array_equal(Q.value, Z)
    Q, V = dap.project(Z, np.zeros((4, 4)), np.zeros(4), np.zeros((4, 4)), np.zeros(4))
    assert not Q.value.any() and not V.value.any()


def test_project_gradient_fd():
    rng = np.random.default_rng(1)
    Z = rng.normal(size=(3, 4))
    W, b = rng.normal(size=(4, 2)), rng.normal(size=2)
    R = rng.normal(size=(3, 2))
    err = dk.finite_difference_check(
        lambda w: dk.sum(dk.hadamard(R, dap.project(Z, w, b, w, b)[0])), [W])
    assert err <= 1e-4


def test_project_dim_mismatch():
    with pytest.raises(ConfigurationError):
        dap.project(np.ones((3, 5)), np.ones((4, 2)), np.zeros(2), np.ones((4, 2)), np.zeros(2))


def test_token_attention_cases():
    rng = np.random.default_rng(2)
    Q = rng.normal(size=(5, 4))
    a = dap.token_attention(Q, np.zeros(4)).value
    np.testing.assert_allclose(a, np.full((5, 1), 0.2), atol=1e-15)
    np.testing.assert_array_equal(dap.token_attention(Q[:1], rng.normal(size=4)).value, [[1.0]])


def test_token_attention_argmax_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(20):
        Q, E, key = rng.normal(size=(6, 4)), rng.normal(size=(6, 4)), rng.normal(size=4)
        a = dap.token_attention(Q, key, E).value[:, 0]
        assert abs(a.sum() - 1.0) < 1e-12
        logits = [float((Q[i] + E[i]) @ key) for i in range(6)]
        assert np.argmax(a) == int(np.argmax(logits))


def test_feature_attention_cases():
    rng = np.random.default_rng(4)
    Q = rng.normal(size=(5, 3))
    np.testing.assert_allclose(dap.feature_attention(Q, np.zeros((3, 3))).value, 0.2, atol=1e-15)
    np.testing.assert_array_equal(dap.feature_attention(Q[:1], rng.normal(size=(3, 3))).value, np.ones((1, 3)))
    A = dap.feature_attention(Q, rng.normal(size=(3, 3))).value
    np.testing.assert_allclose(A.sum(axis=0), 1.0, atol=1e-12)
    A = dap.feature_attention(Q, rng.normal(size=(3, 3)), axis="feature").value
    np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-12)


def test_single_token_zero_keys_is_normalized_value():
    p = _zero_keys(_params())
    Z = np.random.default_rng(5).normal(size=(1, 5))
    cfg = DapConfig(d_c=4, use_position_embedding=False)
    out = dap.embed(TokenFeatures(Z, "text"), p, cfg)
    V = Z @ p.arrays["t.W_V"] + p.arrays["t.b_V"]
    np.testing.assert_allclose(out, V[0] / np.linalg.norm(V[0]), atol=1e-15)


def test_zero_keys_identity_value_is_normalized_column_mean():
    p = _zero_keys(_params(d_f=4, d_c=4))
    p.arrays["t.W_V"] = np.eye(4)
    p.arrays["t.b_V"] = np.zeros(4)
    Z = np.random.default_rng(6).normal(size=(7, 4))
    out = dap.embed(TokenFeatures(Z, "text"), p, DapConfig(d_c=4))
    m = Z.mean(axis=0)
    np.testing.assert_allclose(out, m / np.linalg.norm(m), atol=1e-14)


def test_embeddings_unit_norm_and_deterministic():
    p = _params()
    rng = np.random.default_rng(7)
    for n in (1, 3, 8):
        f = TokenFeatures(rng.normal(size=(n, 5)), "pointcloud", rng.uniform(size=(n, 2)))
        e1, e2 = dap.embed(f, p, DapConfig(d_c=4)), dap.embed(f, p, DapConfig(d_c=4))
        assert abs(np.linalg.norm(e1) - 1.0) <= 1e-9
        np.testing.assert_array_equal(e1, e2)


def test_pointcloud_permutation_invariance_exhaustive():
    p = _params(seed=8, key_scale=1.0)
    rng = np.random.default_rng(8)
    Z, c = rng.normal(size=(4, 5)), rng.uniform(size=(4, 2))
    cfg = DapConfig(d_c=4)
    ref = dap.embed(TokenFeatures(Z, "pointcloud", c), p, cfg)
    worst = 0.0
    for perm in itertools.permutations(range(4)):
        perm = list(perm)
        e = dap.embed(TokenFeatures(Z[perm], "pointcloud", c[perm]), p, cfg)
        worst = max(worst, np.abs(e - ref).max())
    assert worst <= 1e-6


def test_position_embedding_changes_pointcloud_output():
    p = _params(seed=9, key_scale=1.0)
    rng = np.random.default_rng(9)
    Z = rng.normal(size=(4, 5))
    e1 = dap.embed(TokenFeatures(Z, "pointcloud", rng.uniform(size=(4, 2))), p, DapConfig(d_c=4))
    e2 = dap.embed(TokenFeatures(Z, "pointcloud", rng.uniform(size=(4, 2))), p, DapConfig(d_c=4))
    assert np.abs(e1 - e2).max() > 1e-6


def test_embed_many_matches_single():
    p = _params()
    rng = np.random.default_rng(10)
    samples = [TokenFeatures(rng.normal(size=(6, 5)), "pointcloud", rng.uniform(size=(6, 2))) for _ in range(7)]
    batch = dap.embed_many(samples, p, DapConfig(d_c=4), chunk=3)
    for i, s in enumerate(samples):
        np.testing.assert_allclose(batch[i], dap.embed(s, p, DapConfig(d_c=4)), atol=1e-12)


def test_similarity_gradient_wrt_all_params():
    p = _params()
    rng = np.random.default_rng(11)
    Zp, c, Zt = rng.normal(size=(4, 5)), rng.uniform(size=(4, 2)), rng.normal(size=(3, 5))
    names = p.names()
    cfg = DapConfig(d_c=4)

    def fn(*arrays):
        t = dict(zip(names, arrays))
        P = dap.embed_tensor(Zp, "pointcloud", t, cfg, c)
        T = dap.embed_tensor(Zt, "text", t, cfg)
        return dk.sum(dk.hadamard(P, T))

    err = dk.finite_difference_check(fn, [p.arrays[n] for n in names], roundoff_floor=True)
    assert err <= 1e-4


def test_query_bias_gradient_vanishes_under_token_softmax():
    # a shared bias shifts every token's logits equally, so softmax over tokens ignores it
    p = _params()
    rng = np.random.default_rng(12)
    Z = rng.normal(size=(5, 5))
    leaves = p.leaves()
    out = dap.embed_tensor(Z, "text", leaves, DapConfig(d_c=4))
    loss = dk.sum(dk.hadamard(rng.normal(size=4), out))
    (g,) = dk.backward(loss, [leaves["t.b_Q"]])
    assert np.abs(g).max() < 1e-15


def test_ablation_flags():
    p = _params()
    Z = np.random.default_rng(13).normal(size=(5, 5))
    f = TokenFeatures(Z, "text")
    outs = [dap.embed(f, p, DapConfig(d_c=4, use_token_attention=False)),
            dap.embed(f, p, DapConfig(d_c=4, use_feature_attention=False)),
            dap.embed(f, p, DapConfig(d_c=4))]
    for e in outs:
        assert abs(np.linalg.norm(e) - 1.0) <= 1e-9
    assert np.abs(outs[0] - outs[2]).max() > 1e-6


def test_param_shape_validation():
    p = _params()
    bad = dict(p.arrays)
    bad["p.key_token"] = np.zeros(3)
    with pytest.raises(ConfigurationError):
        DapParams(bad)
    with pytest.raises(ConfigurationError):
        dap.embed(TokenFeatures(np.ones((2, 5)), "text"), p, DapConfig(d_c=8))
