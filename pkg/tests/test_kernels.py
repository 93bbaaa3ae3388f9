"""The compiled core and the numpy fallback must be interchangeable."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dareplane import _kernels
from dareplane._kernels import fallback
from dareplane.codec import canonical_codes, huffman_code_lengths

try:
    from dareplane._kernels import _core
except ImportError:  # pragma: no cover - depends on the build
    _core = None

IMPLS = [fallback] + ([_core] if _core is not None else [])
needs_core = pytest.mark.skipif(_core is None, reason="compiled core not built")


def test_backend_is_named():
    assert _kernels.BACKEND in ("cython", "python")


# ---------------------------------------------------------------- oracles


def composite_loop(sigma, rgb, delta, tvals, bg):
    """Front-to-back compositing with an explicit transmittance recurrence."""
    B, K = sigma.shape
    color, acc, depth = np.zeros((B, 3)), np.zeros(B), np.zeros(B)
    for b in range(B):
        T = 1.0
        num = 0.0
        for k in range(K):
            alpha = 1.0 - np.exp(-sigma[b, k] * delta[b, k])
            w = T * alpha
            color[b] += w * rgb[b, k]
            acc[b] += w
            num += w * tvals[b, k]
            T *= 1.0 - alpha
        color[b] += T * bg
        depth[b] = num / max(acc[b], 1e-10)
    return color, acc, depth


def composite_inputs(rng, B=5, K=7):
    sigma = rng.uniform(0, 3, (B, K))
    sigma[0] = 0.0
    rgb = rng.uniform(size=(B, K, 3))
    delta = rng.uniform(0.05, 0.3, (B, K))
    tvals = np.cumsum(delta, axis=1)
    bg = rng.uniform(size=3)
    return sigma, rgb, delta, tvals, bg


@pytest.mark.parametrize("impl", IMPLS, ids=lambda m: m.NAME)
def test_composite_matches_recurrence(impl, rng):
    args = composite_inputs(rng)
    color, acc, depth, weights, trans = impl.composite_forward(*args)
    c2, a2, d2 = composite_loop(*args)
    assert np.allclose(color, c2, atol=1e-12)
    assert np.allclose(acc, a2, atol=1e-12)
    assert np.allclose(depth, d2, atol=1e-12)
    assert np.allclose(color[0], args[4])
    assert np.all(weights >= 0) and np.all(acc <= 1 + 1e-12)


@pytest.mark.parametrize("impl", IMPLS, ids=lambda m: m.NAME)
def test_composite_backward_matches_finite_differences(impl, rng):
    sigma, rgb, delta, tvals, bg = composite_inputs(rng, B=3, K=5)
    gc, ga, gd = rng.normal(size=(3, 3)), rng.normal(size=3), rng.normal(size=3)
    # ray 0 is empty; its depth jumps from 0 to a sample distance, so leave it out
    gd[0] = 0.0

    def loss(s, c):
        color, acc, depth, _, _ = impl.composite_forward(s, c, delta, tvals, bg)
        return np.sum(gc * color) + np.sum(ga * acc) + np.sum(gd * depth)

    _, _, _, w, t = impl.composite_forward(sigma, rgb, delta, tvals, bg)
    g_sigma, g_rgb = impl.composite_backward(sigma, rgb, delta, tvals, bg, w, t, gc, ga, gd)
    h = 1e-6
    for idx in [(1, 0), (1, 3), (2, 4), (0, 2)]:
        sp, sm = sigma.copy(), sigma.copy()
        sp[idx] += h
        sm[idx] = max(sm[idx] - h, 0.0)
        fd = (loss(sp, rgb) - loss(sm, rgb)) / (sp[idx] - sm[idx])
        assert g_sigma[idx] == pytest.approx(fd, rel=1e-5, abs=1e-7)
    cp, cm = rgb.copy(), rgb.copy()
    cp[2, 1, 0] += h
    cm[2, 1, 0] -= h
    assert g_rgb[2, 1, 0] == pytest.approx((loss(sigma, cp) - loss(sigma, cm)) / (2 * h), rel=1e-6)


@pytest.mark.parametrize("impl", IMPLS, ids=lambda m: m.NAME)
def test_gather_scatter_are_adjoint(impl, rng):
    planes = rng.normal(size=(3, 6, 5))
    u, v = rng.uniform(-1, 6, 40), rng.uniform(-1, 5, 40)
    g = rng.normal(size=(3, 40))
    lhs = np.vdot(impl.plane_gather(planes, u, v), g)
    rhs = np.vdot(planes, impl.plane_scatter(g, u, v, 6, 5))
    assert lhs == pytest.approx(rhs, rel=1e-12)


@pytest.mark.parametrize("impl", IMPLS, ids=lambda m: m.NAME)
def test_gather_exact_at_cells(impl, rng):
    planes = rng.normal(size=(2, 4, 4))
    i, j = np.meshgrid(np.arange(4.0), np.arange(4.0), indexing="ij")
    out = impl.plane_gather(planes, i.ravel(), j.ravel())
    assert np.array_equal(out, planes.reshape(2, -1))


# ---------------------------------------------------------- integer codecs


@given(st.lists(st.integers(0, 1), max_size=1200))
def test_rle_round_trip(bits):
    bits = np.array(bits, dtype=np.uint8)
    for impl in IMPLS:
        runs = impl.rle_encode(bits)
        assert np.array_equal(impl.rle_decode(runs, bits.size), bits)


def test_rle_long_runs_split():
    bits = np.concatenate([np.zeros(600, np.uint8), np.ones(3, np.uint8)])
    runs = fallback.rle_encode(bits)
    assert runs.tolist() == [255, 0, 255, 0, 90, 3]
    with pytest.raises(ValueError):
        fallback.rle_decode(runs, 602)


def huffman_tables(symbols):
    lengths = huffman_code_lengths(np.bincount(symbols, minlength=256))
    return lengths, canonical_codes(lengths)


@given(st.lists(st.integers(0, 255), min_size=1, max_size=400), st.integers(0, 3))
def test_huffman_round_trip(symbols, skew):
    symbols = np.array(symbols, dtype=np.uint8) >> skew
    lengths, (codes, fc, fi, counts, order) = huffman_tables(symbols)
    for impl in IMPLS:
        payload, nbits = impl.huffman_encode(symbols, codes, lengths)
        assert nbits == int(lengths[symbols].sum())
        out, used = impl.huffman_decode(payload, nbits, symbols.size, fc, fi, counts, order)
        assert np.array_equal(out, symbols) and used == nbits


def test_huffman_decode_rejects_short_stream(rng):
    symbols = rng.integers(0, 8, 50).astype(np.uint8)
    lengths, (codes, fc, fi, counts, order) = huffman_tables(symbols)
    payload, nbits = fallback.huffman_encode(symbols, codes, lengths)
    for impl in IMPLS:
        with pytest.raises(ValueError):
            impl.huffman_decode(payload, nbits - 3, symbols.size, fc, fi, counts, order)


# --------------------------------------------------- cython versus numpy


@needs_core
def test_core_matches_fallback_floats(rng):
    args = composite_inputs(rng, B=64, K=32)
    f = fallback.composite_forward(*args)
    c = _core.composite_forward(*args)
    for a, b in zip(f, c):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-14)
    g = (rng.normal(size=(64, 3)), rng.normal(size=64), rng.normal(size=64))
    for a, b in zip(fallback.composite_backward(*args, f[3], f[4], *g),
                    _core.composite_backward(*args, f[3], f[4], *g)):
        assert np.allclose(a, b, rtol=1e-10, atol=1e-13)
    planes = rng.normal(size=(4, 16, 16))
    u, v = rng.uniform(0, 15, 500), rng.uniform(0, 15, 500)
    assert np.allclose(fallback.plane_gather(planes, u, v), _core.plane_gather(planes, u, v), atol=1e-14)
    gr = rng.normal(size=(4, 500))
    assert np.allclose(fallback.plane_scatter(gr, u, v, 16, 16), _core.plane_scatter(gr, u, v, 16, 16), atol=1e-12)


@needs_core
def test_core_matches_fallback_codecs(rng):
    bits = (rng.random(5000) < 0.1).astype(np.uint8)
    runs = fallback.rle_encode(bits)
    assert np.array_equal(runs, _core.rle_encode(bits))
    lengths, (codes, fc, fi, counts, order) = huffman_tables(runs)
    pf = fallback.huffman_encode(runs, codes, lengths)
    pc = _core.huffman_encode(runs, codes, lengths)
    assert pf[0] == bytes(pc[0]) and pf[1] == pc[1]
