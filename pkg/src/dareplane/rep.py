"""Plane-factorised fields whose planes live in a wavelet coefficient domain.

A field has two components, density (``"den"``) and appearance (``"app"``).
Each component holds three plane pairs.  In dynamic mode the pairs are
XY-ZT, XZ-YT and YZ-XT; in static mode the temporal partner plane is
replaced by a dense vector over the remaining axis (XY-Z, XZ-Y, YZ-X).

For pair ``p`` with rank ``R_p`` the per-pair feature at a point is

    f_p = sum_r S_r * Q_r * v_r

where ``S_r``/``Q_r`` are bilinear samples of the spatial/partner planes and
``v_r`` is a learned basis vector.  Appearance features are concatenated in
pair order (rank-major inside each pair's planes) and mixed by ``V^RF``;
density features are summed over pairs.

All learnable arrays sit in one flat, ordered ``params`` dict so optimisers,
gradient checks and the archive can walk them uniformly.  Wavelet planes
are stored as coefficient grids under ``"<comp>.<plane>.gNN"``.  Each such
grid has a mask in ``masks`` under the same key.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from . import _kernels
from .grid import linear_weights, resize_bilinear
from .sparsity import MASK_INIT, apply_mask, apply_mask_backward
from .wavelet.basis import make_basis

__all__ = [
    "AXES",
    "COMPONENTS",
    "PAIRS",
    "FieldSpec",
    "PlanePairStack",
    "DaRePlaneField",
    "QueryRecord",
    "materialize",
    "query",
    "query_backward",
    "query_dynamic",
    "query_static",
    "upsample_field",
    "dense_param_count",
]

AXES = "xyzt"
COMPONENTS = ("den", "app")
PAIRS = {
    "dynamic": (("xy", "zt"), ("xz", "yt"), ("yz", "xt")),
    "static": (("xy", "z"), ("xz", "y"), ("yz", "x")),
}


@dataclass(frozen=True)
class FieldSpec:
    """Geometry and hyper-parameters of a field.

    ``app_dim`` is the per-pair appearance width F, ``out_dim`` the width
    after ``V^RF``.  ``basis_kind`` is ``"dtcwt"`` or ``"dwt"``.
    """

    N: int
    T: int = 1
    app_ranks: tuple = (4, 4, 4)
    den_ranks: tuple = (2, 2, 2)
    app_dim: int = 8
    out_dim: int = 8
    den_dim: int = 1
    mode: str = "dynamic"
    basis_kind: str = "dtcwt"
    basis_name: str = None
    level: int = 1

    def __post_init__(self):
        object.__setattr__(self, "app_ranks", tuple(int(r) for r in self.app_ranks))
        object.__setattr__(self, "den_ranks", tuple(int(r) for r in self.den_ranks))
        if self.mode not in PAIRS:
            raise ValueError(f"mode must be 'dynamic' or 'static', got {self.mode!r}")
        if len(self.app_ranks) != 3 or len(self.den_ranks) != 3:
            raise ValueError("one rank per plane pair is required")
        basis = self.basis()
        # store the canonical name so an unnamed basis serialises like a named one
        object.__setattr__(self, "basis_name", basis.name)
        basis.check_shape((self.N, self.N))
        if self.mode == "dynamic":
            basis.check_shape((self.N, self.T))

    def basis(self):
        return make_basis(self.basis_kind, self.basis_name, self.level)

    @property
    def pairs(self):
        return PAIRS[self.mode]

    def ranks(self, comp):
        return self.app_ranks if comp == "app" else self.den_ranks

    def feat_dim(self, comp):
        return self.app_dim if comp == "app" else self.den_dim

    def axis_size(self, axis):
        return self.T if axis == "t" else self.N

    def plane_shape(self, plane):
        return tuple(self.axis_size(a) for a in plane)


@dataclass(frozen=True)
class PlanePairStack:
    """Where one plane pair's parameters live in ``params``."""

    component: str
    index: int
    pair_id: str
    rank: int
    spatial: str
    partner: str
    vector: str
    partner_is_plane: bool


def _stacks(spec):
    out = []
    for comp in COMPONENTS:
        for p, (sp, pa) in enumerate(spec.pairs):
            out.append(PlanePairStack(
                comp, p, f"{sp}-{pa}", spec.ranks(comp)[p], f"{comp}.{sp}", f"{comp}.{pa}",
                f"{comp}.v{p}", len(pa) == 2,
            ))
    return out


def coeff_key(plane_key, k):
    return f"{plane_key}.g{k:02d}"


def _plane_keys_of(stacks):
    keys = []
    for st in stacks:
        keys.append(st.spatial)
        if st.partner_is_plane:
            keys.append(st.partner)
    return keys


def _expected_shapes(spec):
    """Ordered ``{param_key: shape}`` for a spec; this order is the archive order."""
    basis = spec.basis()
    shapes = {}
    for st in _stacks(spec):
        for pk in ([st.spatial, st.partner] if st.partner_is_plane else [st.spatial]):
            plane_shape = spec.plane_shape(pk.split(".")[1])
            for k, gs in enumerate(basis.grid_shapes(plane_shape)):
                shapes[coeff_key(pk, k)] = (st.rank, *gs)
        if not st.partner_is_plane:
            shapes[st.partner] = (st.rank, spec.N)
        shapes[st.vector] = (st.rank, spec.feat_dim(st.component))
    shapes["vrf"] = (3 * spec.app_dim, spec.out_dim)
    return shapes


def _full_masks(spec, params):
    return {k: np.full(s, MASK_INIT) for k, s in _expected_shapes(spec).items() if ".g" in k}


class DaRePlaneField:
    """Parameters plus a cache of materialised planes.

    ``mask_mode`` selects how masks gate coefficients (``"ste"``, ``"soft"``)
    and ``use_masks=False`` bypasses them entirely.
    """

    def __init__(self, spec, params, masks=None, use_masks=True, mask_mode="ste"):
        self.spec = spec
        self.basis = spec.basis()
        self.stacks = _stacks(spec)
        self.params = params
        self.masks = masks if masks is not None else {}
        self.use_masks = use_masks
        self.mask_mode = mask_mode
        self._cache = {}
        self._dirty = {}
        self._check_layout()
        self.mark_dirty()

    # ------------------------------------------------------------ layout

    def plane_keys(self):
        """Wavelet-parameterised planes in canonical order."""
        return _plane_keys_of(self.stacks)

    def plane_shape(self, plane_key):
        return self.spec.plane_shape(plane_key.split(".")[1])

    def plane_rank(self, plane_key):
        comp, plane = plane_key.split(".")
        for st in self.stacks:
            if st.component == comp and plane_key in (st.spatial, st.partner):
                return st.rank
        raise KeyError(plane_key)

    def coeff_keys(self, plane_key=None):
        keys = self.plane_keys() if plane_key is None else [plane_key]
        out = []
        for pk in keys:
            n = len(self.basis.grid_shapes(self.plane_shape(pk)))
            out.extend(coeff_key(pk, k) for k in range(n))
        return out

    def expected_shapes(self):
        return _expected_shapes(self.spec)

    def _check_layout(self):
        want = self.expected_shapes()
        for k, shape in want.items():
            if k not in self.params:
                raise ValueError(f"missing parameter {k!r}")
            if self.params[k].shape != shape:
                raise ValueError(f"parameter {k!r} has shape {self.params[k].shape}, expected {shape}")
        for k in self.masks:
            if k not in want or self.masks[k].shape != want[k]:
                raise ValueError(f"mask {k!r} does not match its coefficient grid")

    # ------------------------------------------------------ construction

    @classmethod
    def initialize(cls, spec, rng, approx_std=0.1, detail_std=0.01, with_masks=True):
        """Random field: normal coefficients, approximation grids wider than details."""
        rng = np.random.default_rng(rng)
        params = {}
        for k, shape in _expected_shapes(spec).items():
            if ".g" in k:
                std = approx_std if k.endswith(".g00") else detail_std
                params[k] = rng.normal(0.0, std, shape)
            elif k == "vrf":
                params[k] = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), shape)
            elif ".v" in k:
                params[k] = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), shape)
            else:  # static partner vectors
                params[k] = rng.normal(0.0, approx_std, shape)
        masks = _full_masks(spec, params) if with_masks else {}
        return cls(spec, params, masks)

    @classmethod
    def zeros(cls, spec, with_masks=True):
        params = {k: np.zeros(s) for k, s in _expected_shapes(spec).items()}
        return cls(spec, params, _full_masks(spec, params) if with_masks else {})

    def copy(self):
        return DaRePlaneField(
            self.spec, {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.masks.items()}, self.use_masks, self.mask_mode,
        )

    def set_planes(self, planes):
        """Overwrite coefficients so that the given planes are reproduced."""
        for pk, arr in planes.items():
            arr = np.asarray(arr, dtype=np.float64)
            for k, g in zip(self.coeff_keys(pk), self.basis.analyze(arr)):
                self.params[k][...] = g
        self.mark_dirty()

    # --------------------------------------------------- materialisation

    def mark_dirty(self, plane_key=None, ranks=None):
        keys = self.plane_keys() if plane_key is None else [plane_key]
        for pk in keys:
            flags = self._dirty.setdefault(pk, np.ones(self.plane_rank(pk), dtype=bool))
            if ranks is None:
                flags[:] = True
            else:
                flags[np.asarray(ranks)] = True

    def is_dirty(self, plane_key):
        return bool(self._dirty[plane_key].any())

    def effective_grids(self, plane_key, ranks=None):
        out = []
        for k in self.coeff_keys(plane_key):
            w = self.params[k] if ranks is None else self.params[k][ranks]
            if self.use_masks and k in self.masks:
                m = self.masks[k] if ranks is None else self.masks[k][ranks]
                w = apply_mask(w, m, self.mask_mode)
            out.append(w)
        return out

    def materialize(self):
        """``{plane_key: (R, m, n)}`` planes, recomputing only dirty rank slots."""
        for pk in self.plane_keys():
            flags = self._dirty[pk]
            if not flags.any():
                continue
            shape = self.plane_shape(pk)
            if pk not in self._cache or flags.all():
                self._cache[pk] = self.basis.synthesize(self.effective_grids(pk), shape)
            else:
                idx = np.flatnonzero(flags)
                self._cache[pk][idx] = self.basis.synthesize(self.effective_grids(pk, idx), shape)
            flags[:] = False
        return dict(self._cache)

    def planes_backward(self, plane_grads, grads):
        """Push plane gradients through synthesis (and masks) into ``grads``.

        Coefficient gradients go to ``grads[key]``, mask gradients to
        ``grads["mask:" + key]``.
        """
        for pk, gp in plane_grads.items():
            for k, gw in zip(self.coeff_keys(pk), self.basis.synthesize_adjoint(gp)):
                if self.use_masks and k in self.masks:
                    g_coef, g_mask = apply_mask_backward(self.params[k], self.masks[k], gw)
                    _acc(grads, k, g_coef)
                    _acc(grads, "mask:" + k, g_mask)
                else:
                    _acc(grads, k, gw)

    # ------------------------------------------------------------ counts

    def coefficient_count(self):
        return sum(self.params[k].size for k in self.coeff_keys())

    def param_count(self):
        return sum(v.size for v in self.params.values())


def _acc(grads, key, value):
    if key in grads:
        grads[key] += value
    else:
        grads[key] = np.array(value, dtype=np.float64, copy=True)


def dense_param_count(spec):
    """Size of the dense 4D feature volume the factorisation replaces."""
    return spec.N ** 3 * max(spec.T, 1) * spec.app_dim


# ------------------------------------------------------------------ queries


@dataclass
class QueryRecord:
    component: str
    pts: np.ndarray
    coords: list = dc_field(default_factory=list)   # per pair: (u, v, u2, v2-or-None)
    S: list = dc_field(default_factory=list)
    Q: list = dc_field(default_factory=list)
    prod: list = dc_field(default_factory=list)
    concat: np.ndarray = None


def _plane_coords(spec, plane, pts):
    a, b = AXES.index(plane[0]), AXES.index(plane[1])
    m, n = spec.plane_shape(plane)
    return pts[:, a] * (m - 1), pts[:, b] * (n - 1)


def materialize(field):
    return field.materialize()


def query(field, comp, pts, planes=None):
    """Features of component ``comp`` at normalised points ``pts`` ``(P, 3|4)``.

    Returns ``(features, record)``; the record feeds :func:`query_backward`.
    """
    spec = field.spec
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.shape[1] == 3:
        pts = np.concatenate([pts, np.zeros((pts.shape[0], 1))], axis=1)
    planes = field.materialize() if planes is None else planes
    rec = QueryRecord(comp, pts)
    feats = []
    for st in field.stacks:
        if st.component != comp:
            continue
        sp = st.spatial.split(".")[1]
        pa = st.partner.split(".")[1]
        u, v = _plane_coords(spec, sp, pts)
        S = _kernels.plane_gather(planes[st.spatial], np.ascontiguousarray(u), np.ascontiguousarray(v))
        if st.partner_is_plane:
            u2, v2 = _plane_coords(spec, pa, pts)
            u2, v2 = np.ascontiguousarray(u2), np.ascontiguousarray(v2)
            Q = _kernels.plane_gather(planes[st.partner], u2, v2)
        else:
            u2 = pts[:, AXES.index(pa)] * (spec.N - 1)
            v2 = None
            i0, i1, w1 = linear_weights(u2, spec.N)
            vec = field.params[st.partner]
            Q = vec[:, i0] * (1.0 - w1) + vec[:, i1] * w1
        prod = S * Q
        rec.coords.append((u, v, u2, v2))
        rec.S.append(S)
        rec.Q.append(Q)
        rec.prod.append(prod)
        feats.append(prod.T @ field.params[st.vector])
    if comp == "app":
        rec.concat = np.concatenate(feats, axis=1)
        return rec.concat @ field.params["vrf"], rec
    return sum(feats[1:], feats[0]), rec


def query_backward(field, rec, g_feat, plane_grads, grads):
    """Accumulate gradients of a query into ``plane_grads`` and ``grads``."""
    spec = field.spec
    comp = rec.component
    stacks = [st for st in field.stacks if st.component == comp]
    if comp == "app":
        _acc(grads, "vrf", rec.concat.T @ g_feat)
        g_cat = g_feat @ field.params["vrf"].T
        F = spec.app_dim
        g_pairs = [g_cat[:, i * F:(i + 1) * F] for i in range(3)]
    else:
        g_pairs = [g_feat] * 3
    for st, (u, v, u2, v2), S, Q, prod, gp in zip(stacks, rec.coords, rec.S, rec.Q, rec.prod, g_pairs):
        _acc(grads, st.vector, prod @ gp)
        g_prod = field.params[st.vector] @ gp.T  # (R, P)
        m, n = field.plane_shape(st.spatial)
        _acc(plane_grads, st.spatial, _kernels.plane_scatter(
            np.ascontiguousarray(g_prod * Q), np.ascontiguousarray(u), np.ascontiguousarray(v), m, n))
        if st.partner_is_plane:
            m2, n2 = field.plane_shape(st.partner)
            _acc(plane_grads, st.partner, _kernels.plane_scatter(np.ascontiguousarray(g_prod * S), u2, v2, m2, n2))
        else:
            gq = g_prod * S
            i0, i1, w1 = linear_weights(u2, spec.N)
            gvec = np.zeros((st.rank, spec.N))
            for r in range(st.rank):
                gvec[r] = (np.bincount(i0, gq[r] * (1.0 - w1), spec.N)
                           + np.bincount(i1, gq[r] * w1, spec.N))
            _acc(grads, st.partner, gvec)


def query_dynamic(field, p):
    """Appearance feature(s) of a dynamic field at ``(x, y, z, t)`` in ``[0, 1]^4``."""
    if field.spec.mode != "dynamic":
        raise ValueError("query_dynamic needs a dynamic field")
    p = np.asarray(p, dtype=np.float64)
    feat, _ = query(field, "app", np.atleast_2d(p))
    return feat[0] if p.ndim == 1 else feat


def query_static(field, p):
    """Appearance feature(s) of a static field at ``(x, y, z)`` in ``[0, 1]^3``."""
    if field.spec.mode != "static":
        raise ValueError("query_static needs a static field")
    p = np.asarray(p, dtype=np.float64)
    feat, _ = query(field, "app", np.atleast_2d(p)[:, :3])
    return feat[0] if p.ndim == 1 else feat


# ----------------------------------------------------------------- resizing


def upsample_field(field, new_N, new_T=None):
    """Resample every plane to a finer grid and re-encode it as coefficients.

    Planes are materialised (masks applied), resized with align-corners
    bilinear interpolation and analysed again, so the new coefficients
    reproduce the resized planes exactly.  The masking is already baked into
    those planes, so the new masks start fully on.
    """
    spec = field.spec
    new_T = spec.T if new_T is None else new_T
    if new_N < spec.N or new_T < spec.T:
        raise ValueError("upsampling cannot shrink the field")
    new_spec = replace(spec, N=int(new_N), T=int(new_T))  # validates divisibility
    planes = field.materialize()
    params = {}
    masks = {}
    basis = new_spec.basis()
    for st in field.stacks:
        keys = [st.spatial, st.partner] if st.partner_is_plane else [st.spatial]
        for pk in keys:
            new_shape = new_spec.plane_shape(pk.split(".")[1])
            resized = resize_bilinear(planes[pk], new_shape)
            for k, g in zip(_coeff_keys_for(basis, pk, new_shape), basis.analyze(resized)):
                params[k] = g
                if k in field.masks:
                    masks[k] = np.full(g.shape, MASK_INIT)
        if not st.partner_is_plane:
            params[st.partner] = resize_bilinear(field.params[st.partner][:, None, :], (1, new_spec.N))[:, 0, :]
        params[st.vector] = field.params[st.vector].copy()
    params["vrf"] = field.params["vrf"].copy()
    ordered = {k: params[k] for k in _expected_shapes(new_spec)}
    return DaRePlaneField(new_spec, ordered, masks, field.use_masks, field.mask_mode)


def _coeff_keys_for(basis, plane_key, shape):
    return [coeff_key(plane_key, k) for k in range(len(basis.grid_shapes(shape)))]

