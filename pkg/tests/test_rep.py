import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dareplane.grid import bilinear_sample, linear_sample, resize_bilinear
from dareplane.rep import (
    DaRePlaneField,
    FieldSpec,
    dense_param_count,
    materialize,
    query,
    query_backward,
    query_dynamic,
    query_static,
    upsample_field,
)
from dareplane.rep import _expected_shapes
from dareplane.wavelet import DtcwtCoeffs, dtcwt2d_inverse, make_basis

AXES = "xyzt"


def small_spec(mode="dynamic", **kw):
    base = dict(N=4, T=2, app_ranks=(2, 2, 2), den_ranks=(1, 2, 1), app_dim=3, out_dim=5, mode=mode)
    base.update(kw)
    return FieldSpec(**base)


def random_field(spec, seed=0, mask_noise=False):
    rng = np.random.default_rng(seed)
    f = DaRePlaneField.initialize(spec, rng, approx_std=1.0, detail_std=0.5)
    if mask_noise:
        for k in f.masks:
            f.masks[k] = rng.normal(size=f.masks[k].shape)
    return f


def loop_oracle(field, comp, p):
    """Rank-by-rank scalar evaluation with freshly synthesised planes."""
    spec = field.spec
    basis = make_basis(spec.basis_kind, spec.basis_name, spec.level)
    feats = []
    for idx, (sp, pa) in enumerate(spec.pairs):
        rank = spec.ranks(comp)[idx]
        vec = field.params[f"{comp}.v{idx}"]
        acc = np.zeros(vec.shape[1])
        planes = {}
        for name in (sp, pa) if len(pa) == 2 else (sp,):
            key = f"{comp}.{name}"
            shape = spec.plane_shape(name)
            planes[name] = basis.synthesize(field.effective_grids(key), shape)
        for r in range(rank):
            def sample(name):
                m, n = spec.plane_shape(name)
                return bilinear_sample(planes[name][r], p[AXES.index(name[0])] * (m - 1),
                                       p[AXES.index(name[1])] * (n - 1))
            s = sample(sp)
            if len(pa) == 2:
                q = sample(pa)
            else:
                q = linear_sample(field.params[f"{comp}.{pa}"][r], p[AXES.index(pa)] * (spec.N - 1))
            acc += s * q * vec[r]
        feats.append(acc)
    if comp == "app":
        return np.concatenate(feats) @ field.params["vrf"]
    return sum(feats)


@pytest.mark.parametrize("mode", ["dynamic", "static"])
@pytest.mark.parametrize("comp", ["app", "den"])
@pytest.mark.parametrize("kind", ["dtcwt", "dwt"])
def test_query_matches_loop_oracle(mode, comp, kind, rng):
    spec = small_spec(mode, basis_kind=kind, basis_name=None if kind == "dwt" else "near_sym_a")
    field = random_field(spec, mask_noise=True)
    pts = rng.uniform(size=(12, 4))
    pts[0] = 0.0
    pts[1] = 1.0
    got, _ = query(field, comp, pts)
    for i, p in enumerate(pts):
        assert np.allclose(got[i], loop_oracle(field, comp, p), atol=1e-12, rtol=1e-12)


def test_zero_field_gives_zero_features(rng):
    for mode in ("dynamic", "static"):
        f = DaRePlaneField.zeros(small_spec(mode))
        f.params["vrf"][:] = 1.0
        assert not np.any(query(f, "app", rng.uniform(size=(5, 4)))[0])


def test_constant_planes_give_product_in_first_slot():
    spec = FieldSpec(N=4, T=2, app_ranks=(1, 1, 1), den_ranks=(1, 1, 1), app_dim=3, out_dim=9)
    f = DaRePlaneField.zeros(spec)
    a, b = 0.7, -1.5
    planes = {}
    for sp, pa in spec.pairs:
        planes[f"app.{sp}"] = np.full((1, *spec.plane_shape(sp)), a)
        planes[f"app.{pa}"] = np.full((1, *spec.plane_shape(pa)), b)
    f.set_planes(planes)
    for p in range(3):
        f.params[f"app.v{p}"][0] = [1.0, 0.0, 0.0]
    f.params["vrf"] = np.eye(9)
    feat = query_dynamic(f, [0.3, 0.6, 0.1, 0.9])
    assert np.allclose(feat, [a * b, 0, 0] * 3, atol=1e-12)


def test_static_constant_plane_and_vector():
    spec = FieldSpec(N=4, app_ranks=(1, 1, 1), den_ranks=(1, 1, 1), app_dim=2, out_dim=6, mode="static")
    f = DaRePlaneField.zeros(spec)
    f.set_planes({f"app.{sp}": np.full((1, 4, 4), 2.0) for sp, _ in spec.pairs})
    for p, (_, axis) in enumerate(spec.pairs):
        f.params[f"app.{axis}"][:] = 3.0
        f.params[f"app.v{p}"][0] = [1.0, 0.0]
    f.params["vrf"] = np.eye(6)
    assert np.allclose(query_static(f, [0.2, 0.4, 0.9]), [6.0, 0.0] * 3)
    with pytest.raises(ValueError):
        query_dynamic(f, [0.2, 0.4, 0.9, 0.0])


def test_materialize_examples(rng):
    spec = small_spec()
    f = DaRePlaneField.zeros(spec)
    assert all(not np.any(p) for p in materialize(f).values())
    target = {pk: rng.normal(size=(f.plane_rank(pk), *f.plane_shape(pk))) for pk in f.plane_keys()}
    f.set_planes(target)
    planes = materialize(f)
    for pk in target:
        assert np.allclose(planes[pk], target[pk], atol=1e-9)


def test_single_approx_coefficient_gives_synthesis_atom():
    spec = FieldSpec(N=8, T=8, app_ranks=(1, 1, 1), den_ranks=(1, 1, 1))
    f = DaRePlaneField.zeros(spec)
    f.params["app.xy.g00"][0, 2, 5] = 1.0
    f.mark_dirty()
    plane = materialize(f)["app.xy"][0]
    # oracle: synthesis of the unit coefficient assembled without the field
    c = make_basis().analyze(np.zeros((1, 8, 8)))
    c[0][0, 2, 5] = 1.0
    atom = dtcwt2d_inverse(DtcwtCoeffs.from_grids([g[0] for g in c], 1, (8, 8)))
    assert np.allclose(plane, atom, atol=1e-14)


def test_cache_tracks_dirty_ranks(rng):
    f = random_field(small_spec())
    first = materialize(f)
    again = materialize(f)
    assert all(first[k] is not again[k] or np.array_equal(first[k], again[k]) for k in first)
    f.params["app.xy.g00"][1] += 1.0
    f.mark_dirty("app.xy", [1])
    assert f.is_dirty("app.xy") and not f.is_dirty("app.zt")
    cached = materialize(f)
    fresh = random_field(small_spec()).copy()
    fresh.params = {k: v.copy() for k, v in f.params.items()}
    fresh.masks = {k: v.copy() for k, v in f.masks.items()}
    fresh.mark_dirty()
    for k, v in materialize(fresh).items():
        assert np.allclose(cached[k], v, atol=1e-12)


@settings(max_examples=15)
@given(st.integers(0, 2**32 - 1), st.floats(-2, 2), st.floats(-2, 2))
def test_query_is_linear_in_one_stack(seed, a, b):
    spec = small_spec()
    rng = np.random.default_rng(seed)
    base = random_field(spec, seed)
    pts = rng.uniform(size=(6, 4))
    keys = base.coeff_keys("app.xy")
    x = {k: rng.normal(size=base.params[k].shape) for k in keys}
    y = {k: rng.normal(size=base.params[k].shape) for k in keys}

    def feat(coefs):
        f = base.copy()
        for k in keys:
            f.params[k] = coefs[k]
        f.mark_dirty()
        return query(f, "app", pts)[0]

    # the other pairs add a fixed offset, removed via the zero-coefficient baseline
    zero = feat({k: np.zeros_like(x[k]) for k in keys})
    mix = feat({k: a * x[k] + b * y[k] for k in keys}) - zero
    assert np.allclose(mix, a * (feat(x) - zero) + b * (feat(y) - zero), atol=1e-10)


def test_boundary_queries_equal_boundary_cells():
    spec = small_spec(app_ranks=(1, 1, 1))
    f = random_field(spec, 3)
    planes = materialize(f)
    feat, rec = query(f, "app", np.array([[0.0, 0.0, 0.0, 0.0], [1.0, 1.0, 1.0, 1.0]]))
    # the first pair's spatial sample at the corners equals the stored corner cells
    assert rec.S[0][0, 0] == planes["app.xy"][0, 0, 0]
    assert rec.S[0][0, 1] == planes["app.xy"][0, -1, -1]
    clamped, _ = query(f, "app", np.array([[-0.5, -1.0, -2.0, -0.1], [1.5, 2.0, 1.1, 3.0]]))
    assert np.array_equal(clamped, feat)


def test_query_backward_against_finite_differences(rng):
    spec = small_spec()
    f = random_field(spec, 1)
    f.mask_mode = "soft"
    for k in f.masks:
        f.masks[k] = rng.normal(size=f.masks[k].shape)
    pts = rng.uniform(size=(7, 4))
    g = rng.normal(size=(7, spec.out_dim))

    def loss(field):
        field.mark_dirty()
        return float(np.sum(query(field, "app", pts)[0] * g))

    feat, rec = query(f, "app", pts)
    plane_grads, grads = {}, {}
    query_backward(f, rec, g, plane_grads, grads)
    f.planes_backward(plane_grads, grads)
    h = 1e-6
    for key in ["app.xy.g00", "app.zt.g05", "app.v1", "vrf", "mask:app.yz.g12", "mask:app.xt.g00"]:
        store = f.masks if key.startswith("mask:") else f.params
        name = key.split(":")[-1]
        idx = tuple(rng.integers(0, s) for s in store[name].shape)
        old = store[name][idx]
        store[name][idx] = old + h
        lp = loss(f)
        store[name][idx] = old - h
        lm = loss(f)
        store[name][idx] = old
        assert grads[key][idx] == pytest.approx((lp - lm) / (2 * h), rel=1e-6, abs=1e-9)


def test_parameter_count_far_below_dense():
    spec = FieldSpec(N=128, T=32, app_ranks=(48, 48, 48), den_ranks=(24, 24, 24), app_dim=27, out_dim=27)
    count = sum(int(np.prod(s)) for s in _expected_shapes(spec).values())
    assert count < 0.01 * dense_param_count(spec)


def test_spec_validation():
    with pytest.raises(ValueError):
        FieldSpec(N=5, T=2)
    with pytest.raises(ValueError):
        FieldSpec(N=8, T=3)
    with pytest.raises(ValueError):
        FieldSpec(N=8, mode="hybrid")
    with pytest.raises(ValueError):
        FieldSpec(N=8, app_ranks=(1, 2))


# ---------------------------------------------------------------- upsampling


def test_upsample_constant_field_stays_constant():
    spec = FieldSpec(N=4, T=2, app_ranks=(1, 1, 1), den_ranks=(1, 1, 1))
    f = DaRePlaneField.zeros(spec)
    f.set_planes({pk: np.full((1, *f.plane_shape(pk)), 0.4) for pk in f.plane_keys()})
    up = upsample_field(f, 8, 4)
    for pk, p in materialize(up).items():
        assert p.shape[-2:] == up.plane_shape(pk)
        assert np.allclose(p, 0.4, atol=1e-9)


def test_upsample_reproduces_resized_planes(rng):
    spec = FieldSpec(N=16, T=4, app_ranks=(2, 1, 1), den_ranks=(1, 1, 1))
    f = random_field(spec, 4, mask_noise=True)
    old = materialize(f)
    up = upsample_field(f, 32, 8)
    new = materialize(up)
    for pk in old:
        assert np.allclose(new[pk], resize_bilinear(old[pk], up.plane_shape(pk)), atol=1e-9)
    # corners of the normalised domain are preserved exactly by align-corners resizing
    corners = np.array([[0, 0, 0, 0], [1, 1, 1, 1], [1, 0, 1, 0]], dtype=float)
    assert np.allclose(query(up, "app", corners)[0], query(f, "app", corners)[0], atol=1e-9)


def test_upsample_to_same_resolution_is_identity(rng):
    spec = small_spec(N=8, T=4)
    f = random_field(spec, 5)
    same = upsample_field(f, 8, 4)
    a, b = materialize(f), materialize(same)
    for k in a:
        assert np.allclose(a[k], b[k], atol=1e-9)


def test_upsample_rejects_bad_sizes():
    f = random_field(small_spec(N=8, T=4))
    with pytest.raises(ValueError):
        upsample_field(f, 4)
    with pytest.raises(ValueError):
        upsample_field(f, 9)
