import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dareplane.field import (
    HEAD_DIMS,
    VIEW_TERMS,
    DeformationHeads,
    GaussianSet,
    TinyMlp,
    color,
    deform,
    deform_backward,
    density,
    density_backward,
    view_encoding,
)


def test_density_examples(rng):
    assert density(np.zeros(3)) == pytest.approx(math.log(2))
    assert 0.0 <= density(np.array([-800.0])) < 1e-300
    f = rng.normal(size=(20, 2)) * 5
    oracle = [math.log1p(math.exp(x)) for x in f[:, 0]]
    assert np.allclose(density(f), oracle, rtol=1e-14)
    assert density(np.array([1000.0])) == pytest.approx(1000.0)


@given(st.floats(-50, 50), st.floats(0, 10))
def test_density_monotone_nonnegative(x, dx):
    a, b = density(np.array([x])), density(np.array([x + dx]))
    assert 0.0 <= a <= b


def test_density_backward(rng):
    f = rng.normal(size=(6, 2))
    g = rng.normal(size=6)
    h = 1e-6
    e = np.zeros_like(f)
    e[:, 0] = h
    fd = (density(f + e, -1.0) - density(f - e, -1.0)) / (2 * h) * g
    got = density_backward(f, g, -1.0)
    assert np.allclose(got[:, 0], fd, rtol=1e-7)
    assert not np.any(got[:, 1])


def test_view_encoding_normalises():
    a = view_encoding(np.array([0.0, 0.0, 2.0]))
    assert np.allclose(a, [1, 0, 0, 1, 0, 0, 0, 0, 2])
    assert view_encoding(np.ones((4, 3))).shape == (4, VIEW_TERMS)


def test_zero_mlp_gives_grey():
    mlp = TinyMlp.zeros(5 + VIEW_TERMS, 3)
    assert np.allclose(color(np.ones(5), np.array([0, 0, 1.0]), mlp), 0.5)


def test_mlp_matches_hand_computation():
    # single path: input 0 -> hidden 0 -> hidden 0 -> output 1
    mlp = TinyMlp.zeros(2 + VIEW_TERMS, 3, hidden=4)
    mlp.params["w0"][0, 0] = 2.0
    mlp.params["b0"][0] = -1.0
    mlp.params["w1"][0, 0] = 3.0
    mlp.params["w2"][0, 1] = 0.5
    mlp.params["b2"][:] = [0.1, 0.2, 0.3]
    x = 1.25
    h0 = max(2 * x - 1, 0)
    h1 = 3 * h0
    expect = [1 / (1 + math.exp(-v)) for v in (0.1, 0.2 + 0.5 * h1, 0.3)]
    assert np.allclose(color(np.array([x, 7.0]), np.array([1.0, 0, 0]), mlp), expect)


def test_direction_ablated_color_is_view_independent(rng):
    mlp = TinyMlp.create(4 + VIEW_TERMS, 3, rng, hidden=16)
    mlp.params["w0"][4:] = 0.0
    f = rng.normal(size=4)
    assert np.array_equal(color(f, np.array([1.0, 0, 0]), mlp), color(f, np.array([0, -0.6, 0.8]), mlp))


def test_color_in_unit_interval_and_lipschitz(rng):
    mlp = TinyMlp.create(4 + VIEW_TERMS, 3, rng, hidden=32)
    f = rng.normal(size=(50, 4))
    d = rng.normal(size=3)
    c = color(f, d, mlp)
    assert np.all((c > 0) & (c < 1))
    # sigmoid(ReLU net) is Lipschitz with constant <= product of weight norms / 4
    bound = np.prod([np.linalg.norm(mlp.params[w], 2) for w in ("w0", "w1", "w2")]) / 4
    eps = rng.normal(size=f.shape) * 1e-3
    ratio = np.linalg.norm(color(f + eps, d, mlp) - c, axis=1) / np.linalg.norm(eps, axis=1)
    assert np.all(ratio <= bound)


def test_mlp_backward_matches_finite_differences(rng):
    mlp = TinyMlp.create(5, 3, rng, hidden=8)
    x = rng.normal(size=(4, 5))
    gy = rng.normal(size=(4, 3))
    y, cache = mlp.forward(x)
    gx, grads = mlp.backward(cache, gy)
    h = 1e-6

    def loss():
        return float(np.sum(mlp(x) * gy))

    for name in ("w0", "b1", "w2"):
        p = mlp.params[name]
        idx = tuple(rng.integers(0, s) for s in p.shape)
        old = p[idx]
        p[idx] = old + h
        lp = loss()
        p[idx] = old - h
        lm = loss()
        p[idx] = old
        assert grads[name][idx] == pytest.approx((lp - lm) / (2 * h), rel=1e-5, abs=1e-9)
    e = np.zeros_like(x)
    e[2, 3] = h
    fd = (np.sum(mlp(x + e) * gy) - np.sum(mlp(x - e) * gy)) / (2 * h)
    assert gx[2, 3] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_mlp_rejects_broken_shapes():
    params = TinyMlp.zeros(3, 2, hidden=4).params
    params["w1"] = np.zeros((5, 4))
    with pytest.raises(ValueError):
        TinyMlp(params)


# ---------------------------------------------------------------- Gaussians


def test_zero_heads_are_identity(rng):
    g0 = GaussianSet.random(6, rng)
    gt = deform(g0, rng.normal(size=(6, 5)), DeformationHeads.zeros(5, hidden=8))
    assert np.allclose(gt.mu, g0.mu) and np.allclose(gt.rot, g0.rot, atol=1e-15)
    assert np.array_equal(gt.scale, g0.scale) and np.array_equal(gt.opacity, g0.opacity)
    gt.validate()


def test_forced_position_delta_shifts_by_x(rng):
    g0 = GaussianSet.random(4, rng)
    heads = DeformationHeads.zeros(3, hidden=4)
    heads.heads["mu"].params["b2"][:] = [1.0, 0.0, 0.0]
    gt = deform(g0, rng.normal(size=(4, 3)), heads)
    assert np.array_equal(gt.mu, g0.mu + np.array([1.0, 0.0, 0.0]))


def test_deform_matches_per_gaussian_loop(rng):
    g0 = GaussianSet.random(5, rng)
    heads = DeformationHeads.create(4, rng, hidden=16, out_scale=2.0)
    feats = rng.normal(size=(5, 4))
    gt = deform(g0, feats, heads)
    for i in range(5):
        out = {k: heads.heads[k](feats[i:i + 1])[0] for k in HEAD_DIMS}
        q = g0.rot[i] + out["rot"]
        assert np.allclose(gt.mu[i], g0.mu[i] + out["mu"])
        assert np.allclose(gt.rot[i], q / np.sqrt(np.sum(q * q)))
        assert np.allclose(gt.scale[i], np.maximum(g0.scale[i] + out["scale"], 1e-6))
        assert gt.opacity[i] == pytest.approx(min(max(g0.opacity[i] + out["opacity"][0], 0.0), 1.0))
    assert np.all(np.abs(np.linalg.norm(gt.rot, axis=1) - 1) <= 1e-9)
    gt.validate()


def test_deform_backward_matches_finite_differences(rng):
    g0 = GaussianSet.random(3, rng)
    heads = DeformationHeads.create(4, rng, hidden=8, out_scale=0.05)
    feats = rng.normal(size=(3, 4))
    go = GaussianSet(rng.normal(size=(3, 3)), rng.normal(size=(3, 4)), rng.normal(size=(3, 3)), rng.normal(size=3))

    def loss(f):
        gt = deform(g0, f, heads)
        return float(np.sum(gt.mu * go.mu) + np.sum(gt.rot * go.rot) + np.sum(gt.scale * go.scale)
                     + np.sum(gt.opacity * go.opacity))

    _, cache = deform(g0, feats, heads, with_cache=True)
    g_feat, grads = deform_backward(heads, cache, go)
    assert set(grads) == set(heads.params())
    h = 1e-6
    for i, j in [(0, 0), (1, 3), (2, 2)]:
        e = np.zeros_like(feats)
        e[i, j] = h
        assert g_feat[i, j] == pytest.approx((loss(feats + e) - loss(feats - e)) / (2 * h), rel=1e-5, abs=1e-8)
    flat = heads.params()
    for key in ("head.rot.w2", "head.opacity.b2", "head.mu.w0"):
        p = flat[key]
        idx = tuple(rng.integers(0, s) for s in p.shape)
        old = p[idx]
        p[idx] = old + h
        lp = loss(feats)
        p[idx] = old - h
        lm = loss(feats)
        p[idx] = old
        assert grads[key][idx] == pytest.approx((lp - lm) / (2 * h), rel=1e-5, abs=1e-8)


def test_gaussian_validation():
    with pytest.raises(ValueError):
        GaussianSet(np.zeros(3), [1, 1, 0, 0], [1, 1, 1], [0.5]).validate()
    with pytest.raises(ValueError):
        GaussianSet(np.zeros(3), [1, 0, 0, 0], [1, 0, 1], [0.5]).validate()
    with pytest.raises(ValueError):
        DeformationHeads({"mu": TinyMlp.zeros(3, 3, 4, "linear")})
    with pytest.raises(ValueError):
        deform(GaussianSet.random(2, 0), np.zeros((3, 4)), DeformationHeads.zeros(4, hidden=4))
