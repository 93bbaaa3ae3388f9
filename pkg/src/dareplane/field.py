"""Decoders from queried features to renderable quantities.

Density reads the first density feature through a softplus.  Colour comes
from a three-layer MLP fed with the appearance feature and a 9-term
polynomial encoding of the view direction.  Gaussian deformation uses four
such MLPs predicting additive updates of position, rotation, scale and
opacity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sparsity import sigmoid

__all__ = [
    "VIEW_TERMS",
    "softplus",
    "density",
    "density_backward",
    "view_encoding",
    "TinyMlp",
    "color",
    "GaussianSet",
    "DeformationHeads",
    "deform",
    "deform_backward",
]

VIEW_TERMS = 9


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def density(feature, shift=0.0):
    """``softplus(feature[..., 0] + shift)``; always non-negative."""
    f = np.asarray(feature, dtype=np.float64)
    return softplus(f[..., 0] + shift)


def density_backward(feature, g_sigma, shift=0.0):
    """Gradient w.r.t. the density feature given ``dL/dsigma``."""
    f = np.asarray(feature, dtype=np.float64)
    g = np.zeros_like(f)
    g[..., 0] = g_sigma * sigmoid(f[..., 0] + shift)
    return g


def view_encoding(dirs):
    """Polynomial (degree <= 2) features of unit directions, shape ``(..., 9)``.

    Directions are normalised first, so any non-zero vector is accepted.
    """
    d = np.asarray(dirs, dtype=np.float64)
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    return np.stack([np.ones_like(x), x, y, z, x * y, y * z, x * z, x * x - y * y, 3.0 * z * z - 1.0], axis=-1)


class TinyMlp:
    """``in -> hidden -> hidden -> out`` with ReLU; ``out_act`` is ``"sigmoid"`` or ``"linear"``.

    Weights live in ``params`` as ``w0, b0, w1, b1, w2, b2`` so they can be
    merged into a trainer's parameter dict under a prefix.
    """

    def __init__(self, params, out_act="sigmoid"):
        self.params = params
        self.out_act = out_act
        w0, w1, w2 = params["w0"], params["w1"], params["w2"]
        if w0.shape[1] != w1.shape[0] or w1.shape[1] != w2.shape[0]:
            raise ValueError("layer shapes do not chain")

    @classmethod
    def create(cls, in_dim, out_dim, rng, hidden=128, out_act="sigmoid", out_scale=1.0):
        rng = np.random.default_rng(rng)
        params = {
            "w0": rng.normal(0.0, np.sqrt(2.0 / in_dim), (in_dim, hidden)),
            "b0": np.zeros(hidden),
            "w1": rng.normal(0.0, np.sqrt(2.0 / hidden), (hidden, hidden)),
            "b1": np.zeros(hidden),
            "w2": rng.normal(0.0, out_scale * np.sqrt(1.0 / hidden), (hidden, out_dim)),
            "b2": np.zeros(out_dim),
        }
        return cls(params, out_act)

    @classmethod
    def zeros(cls, in_dim, out_dim, hidden=128, out_act="sigmoid"):
        shapes = {"w0": (in_dim, hidden), "b0": (hidden,), "w1": (hidden, hidden),
                  "b1": (hidden,), "w2": (hidden, out_dim), "b2": (out_dim,)}
        return cls({k: np.zeros(s) for k, s in shapes.items()}, out_act)

    @property
    def in_dim(self):
        return self.params["w0"].shape[0]

    @property
    def out_dim(self):
        return self.params["w2"].shape[1]

    def forward(self, x):
        """Returns ``(y, cache)`` for a batch ``x`` of shape ``(B, in_dim)``."""
        p = self.params
        a0 = x @ p["w0"] + p["b0"]
        h0 = np.maximum(a0, 0.0)
        a1 = h0 @ p["w1"] + p["b1"]
        h1 = np.maximum(a1, 0.0)
        z = h1 @ p["w2"] + p["b2"]
        y = sigmoid(z) if self.out_act == "sigmoid" else z
        return y, (x, a0, h0, a1, h1, y)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, gy):
        """Returns ``(dL/dx, {name: dL/dweight})``."""
        p = self.params
        x, a0, h0, a1, h1, y = cache
        gz = gy * y * (1.0 - y) if self.out_act == "sigmoid" else gy
        grads = {"w2": h1.T @ gz, "b2": gz.sum(axis=0)}
        gh1 = gz @ p["w2"].T
        ga1 = gh1 * (a1 > 0)
        grads["w1"] = h0.T @ ga1
        grads["b1"] = ga1.sum(axis=0)
        gh0 = ga1 @ p["w1"].T
        ga0 = gh0 * (a0 > 0)
        grads["w0"] = x.T @ ga0
        grads["b0"] = ga0.sum(axis=0)
        return ga0 @ p["w0"].T, grads


def color(feature, view_dir, mlp):
    """RGB in ``(0, 1)`` for features ``(B, F)`` (or ``(F,)``) seen along ``view_dir``."""
    f = np.asarray(feature, dtype=np.float64)
    single = f.ndim == 1
    f = np.atleast_2d(f)
    enc = np.broadcast_to(view_encoding(view_dir), (f.shape[0], VIEW_TERMS))
    rgb = mlp(np.concatenate([f, enc], axis=1))
    return rgb[0] if single else rgb


# ---------------------------------------------------------------- Gaussians


@dataclass
class GaussianSet:
    """Centres ``mu (G,3)``, unit quaternions ``rot (G,4)``, ``scale (G,3)`` > 0, ``opacity (G,)``."""

    mu: np.ndarray
    rot: np.ndarray
    scale: np.ndarray
    opacity: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(-1, 3)
        G = self.mu.shape[0]
        self.rot = np.asarray(self.rot, dtype=np.float64).reshape(G, 4)
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(G, 3)
        self.opacity = np.asarray(self.opacity, dtype=np.float64).reshape(G)

    def __len__(self):
        return self.mu.shape[0]

    def validate(self, tol=1e-9):
        if np.any(np.abs(np.linalg.norm(self.rot, axis=1) - 1.0) > tol):
            raise ValueError("quaternions must have unit norm")
        if np.any(self.scale <= 0):
            raise ValueError("scales must be positive")
        if np.any((self.opacity < 0) | (self.opacity > 1)):
            raise ValueError("opacities must lie in [0, 1]")

    @classmethod
    def random(cls, count, rng):
        rng = np.random.default_rng(rng)
        q = rng.normal(size=(count, 4))
        return cls(rng.uniform(0, 1, (count, 3)), q / np.linalg.norm(q, axis=1, keepdims=True),
                   rng.uniform(0.01, 0.1, (count, 3)), rng.uniform(0.1, 0.9, count))


SCALE_FLOOR = 1e-6
HEAD_DIMS = {"mu": 3, "rot": 4, "scale": 3, "opacity": 1}


class DeformationHeads:
    """Four linear-output MLPs predicting Gaussian updates from a feature."""

    def __init__(self, heads):
        if set(heads) != set(HEAD_DIMS):
            raise ValueError(f"heads must be exactly {sorted(HEAD_DIMS)}")
        dims = {h.in_dim for h in heads.values()}
        if len(dims) != 1:
            raise ValueError("all heads must share the feature dimension")
        for k, h in heads.items():
            if h.out_dim != HEAD_DIMS[k]:
                raise ValueError(f"head {k} must output {HEAD_DIMS[k]} values")
        self.heads = heads

    @classmethod
    def create(cls, feat_dim, rng, hidden=128, out_scale=0.1):
        rng = np.random.default_rng(rng)
        return cls({k: TinyMlp.create(feat_dim, d, rng, hidden, "linear", out_scale) for k, d in HEAD_DIMS.items()})

    @classmethod
    def zeros(cls, feat_dim, hidden=128):
        return cls({k: TinyMlp.zeros(feat_dim, d, hidden, "linear") for k, d in HEAD_DIMS.items()})

    def params(self):
        """Flat view ``{"head.<name>.<weight>": array}`` sharing storage."""
        return {f"head.{k}.{w}": v for k, h in self.heads.items() for w, v in h.params.items()}


def deform(g0, features, heads, with_cache=False):
    """Gaussians at the time the per-Gaussian ``features`` were queried.

    Updates are additive.  The rotation is renormalised after the addition,
    scales are floored at ``SCALE_FLOOR`` and opacities clipped to ``[0, 1]``.
    """
    feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if feats.shape[0] != len(g0):
        raise ValueError("one feature per Gaussian is required")
    outs = {k: h.forward(feats) for k, h in heads.heads.items()}
    mu = g0.mu + outs["mu"][0]
    q = g0.rot + outs["rot"][0]
    qn = np.linalg.norm(q, axis=1, keepdims=True)
    rot = q / qn
    scale = np.maximum(g0.scale + outs["scale"][0], SCALE_FLOOR)
    opacity = np.clip(g0.opacity + outs["opacity"][0][:, 0], 0.0, 1.0)
    gt = GaussianSet(mu, rot, scale, opacity)
    if with_cache:
        return gt, (g0, feats, outs, q, qn)
    return gt


def deform_backward(heads, cache, g_out):
    """Back-propagate ``g_out`` (a :class:`GaussianSet` of gradients).

    Returns ``(dL/dfeatures, {"head.<name>.<weight>": grad})``.
    """
    g0, feats, outs, q, qn = cache
    rot = q / qn
    gq = (g_out.rot - rot * np.sum(g_out.rot * rot, axis=1, keepdims=True)) / qn
    s_raw = g0.scale + outs["scale"][0]
    o_raw = g0.opacity + outs["opacity"][0][:, 0]
    g_heads = {
        "mu": g_out.mu,
        "rot": gq,
        "scale": g_out.scale * (s_raw > SCALE_FLOOR),
        "opacity": (g_out.opacity * ((o_raw >= 0) & (o_raw <= 1)))[:, None],
    }
    g_feat = np.zeros_like(feats)
    grads = {}
    for k, h in heads.heads.items():
        gx, gw = h.backward(outs[k][1], g_heads[k])
        g_feat += gx
        grads.update({f"head.{k}.{w}": v for w, v in gw.items()})
    return g_feat, grads
