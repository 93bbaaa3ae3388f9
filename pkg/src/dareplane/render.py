"""Pinhole rays, stratified sampling, emission-absorption compositing.

Scenes live in the unit cube ``[0, 1]^3``; every ray is clipped to it and
sampled with ``K`` jittered strata.  Jitter comes from a counter-based
splitmix64 generator keyed by ``(seed, frame, pixel)`` so renders are
bit-identical regardless of how rays are split across workers.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import _kernels
from .field import TinyMlp, VIEW_TERMS, density, density_backward, view_encoding
from .grid import Image
from .rep import query, query_backward

__all__ = [
    "Camera",
    "look_at",
    "generate_rays",
    "project",
    "splitmix64",
    "uniform_stream",
    "stratified_samples",
    "integrate",
    "EmptinessVoxel",
    "build_emptiness",
    "RadianceModel",
    "RenderJob",
    "render_rays",
    "render_rays_backward",
    "render_image",
    "worker_count",
]


# -------------------------------------------------------------------- camera


@dataclass
class Camera:
    """Pinhole camera.  ``rotation`` maps camera to world axes (x right, y down, z forward)."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    position: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if np.abs(self.rotation.T @ self.rotation - np.eye(3)).max() > 1e-9:
            raise ValueError("rotation must be orthonormal")

    @classmethod
    def from_fov(cls, width, height, fov_deg, rotation, position):
        f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
        return cls(f, f, width / 2, height / 2, rotation, position, width, height)

    def pixel_grid(self):
        """Pixel-centre coordinates ``(H*W, 2)`` as ``(x, y)`` in row-major order."""
        ys, xs = np.mgrid[0:self.height, 0:self.width]
        return np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5], axis=1).astype(np.float64)


def look_at(eye, target, up=(0.0, 0.0, 1.0)):
    """Camera-to-world rotation looking from ``eye`` towards ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd], axis=1)


def generate_rays(cam, pixels):
    """Origins and unit directions for pixel coordinates ``(P, 2)`` given as ``(x, y)``."""
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    d_cam = np.stack([(px[:, 0] - cam.cx) / cam.fx, (px[:, 1] - cam.cy) / cam.fy, np.ones(len(px))], axis=1)
    d = d_cam @ cam.rotation.T
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return np.broadcast_to(cam.position, d.shape).copy(), d


def project(cam, points):
    """Pixel coordinates ``(P, 2)`` of world points (in front of the camera)."""
    pc = (np.asarray(points, dtype=np.float64).reshape(-1, 3) - cam.position) @ cam.rotation
    return np.stack([cam.fx * pc[:, 0] / pc[:, 2] + cam.cx, cam.fy * pc[:, 1] / pc[:, 2] + cam.cy], axis=1)


# ----------------------------------------------------------------------- RNG

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def splitmix64(x):
    """One splitmix64 output per input word (wrapping uint64 arithmetic)."""
    z = np.asarray(x, dtype=np.uint64) + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def uniform_stream(seed, frame, pixel_ids, count):
    """``(P, count)`` uniforms in ``[0, 1)`` keyed by ``(seed, frame, pixel)``."""
    with np.errstate(over="ignore"):
        base = splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ splitmix64(np.uint64(frame)))
        key = splitmix64(base ^ np.asarray(pixel_ids, dtype=np.uint64))
        words = splitmix64(key[:, None] + np.arange(count, dtype=np.uint64)[None, :])
    return (words >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def _box_range(origins, dirs, near, far):
    # slab test against the unit cube
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (0.0 - origins) * inv
        t1 = (1.0 - origins) * inv
    lo = np.nanmax(np.minimum(t0, t1), axis=1)
    hi = np.nanmin(np.maximum(t0, t1), axis=1)
    lo = np.maximum(lo, near)
    hi = np.minimum(hi, far)
    return lo, np.maximum(hi, lo)


def stratified_samples(origins, dirs, near, far, K, jitter):
    """Sample depths ``(B, K)``, segment lengths ``(B, K)`` and points ``(B, K, 3)``.

    ``jitter`` in ``[0, 1)`` places each sample inside its stratum;
    ``None`` uses stratum midpoints.
    """
    lo, hi = _box_range(origins, dirs, near, far)
    width = (hi - lo) / K
    u = 0.5 if jitter is None else jitter
    tvals = lo[:, None] + (np.arange(K)[None, :] + u) * width[:, None]
    delta = np.broadcast_to(width[:, None], tvals.shape).copy()
    pts = origins[:, None, :] + tvals[..., None] * dirs[:, None, :]
    return tvals, delta, np.clip(pts, 0.0, 1.0)


def integrate(sigma, rgb, delta, tvals=None, background=(0.0, 0.0, 0.0)):
    """Composite samples along rays.

    Accepts one ray (``sigma`` of shape ``(K,)``) or a batch ``(B, K)``.
    Returns ``(rgb, opacity, depth)``.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    single = sigma.ndim == 1
    sigma = np.atleast_2d(sigma)
    B, K = sigma.shape
    rgb = np.asarray(rgb, dtype=np.float64).reshape(B, K, 3)
    delta = np.broadcast_to(np.asarray(delta, dtype=np.float64), (B, K))
    if tvals is None:
        tvals = np.cumsum(delta, axis=1) - 0.5 * delta
    tvals = np.broadcast_to(np.asarray(tvals, dtype=np.float64), (B, K))
    bg = np.asarray(background, dtype=np.float64)
    c, acc, depth, _, _ = _kernels.composite_forward(
        np.ascontiguousarray(sigma), np.ascontiguousarray(rgb), np.ascontiguousarray(delta),
        np.ascontiguousarray(tvals), bg)
    if single:
        return c[0], float(acc[0]), float(depth[0])
    return c, acc, depth


# ------------------------------------------------------------------ emptiness


@dataclass
class EmptinessVoxel:
    """Boolean occupancy over ``E^3`` cells of the unit cube (index order x, y, z)."""

    occupancy: np.ndarray
    tau: float = 1e-4

    @property
    def resolution(self):
        return self.occupancy.shape[0]

    @classmethod
    def full(cls, E=32, tau=1e-4):
        return cls(np.ones((E, E, E), dtype=bool), tau)

    def lookup(self, pts):
        E = self.resolution
        idx = np.clip((np.asarray(pts)[..., :3] * E).astype(np.int64), 0, E - 1)
        return self.occupancy[idx[..., 0], idx[..., 1], idx[..., 2]]

    def fraction(self):
        return float(self.occupancy.mean())


def _dilate(occ):
    padded = np.pad(occ, 1)
    out = np.zeros_like(occ)
    E0, E1, E2 = occ.shape
    for dx in range(3):
        for dy in range(3):
            for dz in range(3):
                out |= padded[dx:dx + E0, dy:dy + E1, dz:dz + E2]
    return out


def build_emptiness(model, E=32, tau=1e-4, time_samples=None, chunk=65536):
    """Occupancy from the maximum density over time samples at cell corners.

    A cell is occupied when any of its corners exceeds ``tau`` at any time
    sample; the result is dilated by one cell.
    """
    if E < 2:
        raise ValueError("emptiness resolution must be at least 2")
    if time_samples is None:
        T = model.field.spec.T
        time_samples = np.linspace(0.0, 1.0, T) if T > 1 else np.zeros(1)
    g = np.linspace(0.0, 1.0, E + 1)
    corners = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    planes = model.field.materialize()
    peak = np.zeros(len(corners))
    for t in np.atleast_1d(time_samples):
        for s in range(0, len(corners), chunk):
            c = corners[s:s + chunk]
            pts = np.concatenate([c, np.full((len(c), 1), float(t))], axis=1)
            feat, _ = query(model.field, "den", pts, planes)
            peak[s:s + chunk] = np.maximum(peak[s:s + chunk], density(feat, model.density_shift))
    hot = (peak > tau).reshape(E + 1, E + 1, E + 1)
    occ = np.zeros((E, E, E), dtype=bool)
    for a in (0, 1):
        for b in (0, 1):
            for c in (0, 1):
                occ |= hot[a:a + E, b:b + E, c:c + E]
    return EmptinessVoxel(_dilate(occ), tau)


# ---------------------------------------------------------------------- model


@dataclass
class RadianceModel:
    """A factorised field plus its colour MLP.

    Optical depth of a segment is ``sigma * delta * distance_scale`` with
    ``sigma = softplus(f + density_shift)``; the scale lets densities of
    order one saturate across the unit cube.
    """

    field: object
    mlp: TinyMlp
    density_shift: float = -3.0
    distance_scale: float = 25.0

    @classmethod
    def create(cls, field, rng, hidden=128, density_shift=-3.0, distance_scale=25.0):
        mlp = TinyMlp.create(field.spec.out_dim + VIEW_TERMS, 3, rng, hidden, "sigmoid")
        return cls(field, mlp, density_shift, distance_scale)

    def trainables(self):
        """Flat dict of every optimised array; entries share storage."""
        out = dict(self.field.params)
        out.update({"mask:" + k: v for k, v in self.field.masks.items()})
        out.update({"mlp." + k: v for k, v in self.mlp.params.items()})
        return out

    def copy(self):
        return RadianceModel(self.field.copy(), TinyMlp({k: v.copy() for k, v in self.mlp.params.items()},
                                                        self.mlp.out_act), self.density_shift, self.distance_scale)


@dataclass
class RenderJob:
    camera: Camera
    time: float = 0.0
    samples: int = 64
    near: float = 0.0
    far: float = 10.0
    background: tuple = (0.0, 0.0, 0.0)
    seed: int = 0
    frame: int = 0

    def __post_init__(self):
        if self.samples < 2:
            raise ValueError("at least two samples per ray are required")
        if not self.near < self.far:
            raise ValueError("near must be smaller than far")


@dataclass
class RayCache:
    sigma: np.ndarray
    rgb: np.ndarray
    delta: np.ndarray
    tvals: np.ndarray
    weights: np.ndarray
    trans: np.ndarray
    active: np.ndarray
    den_feat: np.ndarray
    den_rec: object
    app_rec: object
    mlp_cache: tuple
    bg: np.ndarray = dc_field(default=None)


def render_rays(model, origins, dirs, time, K, near=0.0, far=10.0, background=(0.0, 0.0, 0.0),
                jitter=None, voxel=None, planes=None, keep_cache=False):
    """Render a batch of rays.  Returns ``(color, acc, depth, cache)``.

    ``time`` is a scalar or one value per ray.  Samples outside the
    emptiness voxel are skipped (density zero).
    """
    field = model.field
    B = len(origins)
    tvals, delta, pts = stratified_samples(origins, dirs, near, far, K, jitter)
    flat = pts.reshape(-1, 3)
    active = np.ones(B * K, dtype=bool) if voxel is None else voxel.lookup(flat)
    active &= np.repeat(delta[:, 0] > 0, K)
    idx = np.flatnonzero(active)
    times = np.repeat(np.broadcast_to(np.asarray(time, dtype=np.float64), (B,)), K)
    P = np.concatenate([flat[idx], times[idx, None]], axis=1)
    planes = field.materialize() if planes is None else planes
    sigma = np.zeros(B * K)
    rgb = np.zeros((B * K, 3))
    den_feat = den_rec = app_rec = mlp_cache = None
    if len(idx):
        den_feat, den_rec = query(field, "den", P, planes)
        sigma[idx] = density(den_feat, model.density_shift)
        app_feat, app_rec = query(field, "app", P, planes)
        enc = view_encoding(np.repeat(dirs, K, axis=0)[idx])
        out, mlp_cache = model.mlp.forward(np.concatenate([app_feat, enc], axis=1))
        rgb[idx] = out
    sigma = sigma.reshape(B, K)
    rgb = rgb.reshape(B, K, 3)
    bg = np.asarray(background, dtype=np.float64)
    delta = delta * model.distance_scale
    color, acc, depth, weights, trans = _kernels.composite_forward(sigma, rgb, delta, tvals, bg)
    cache = None
    if keep_cache:
        cache = RayCache(sigma, rgb, delta, tvals, weights, trans, idx, den_feat, den_rec, app_rec, mlp_cache, bg)
    return color, acc, depth, cache


def render_rays_backward(model, cache, g_color, g_acc=None, g_depth=None, grads=None, plane_grads=None):
    """Accumulate parameter gradients of a rendered batch.

    Plane gradients are collected in ``plane_grads`` (pushed through the
    wavelet synthesis by the caller via ``field.planes_backward``) and all
    other gradients in ``grads``.
    """
    grads = {} if grads is None else grads
    plane_grads = {} if plane_grads is None else plane_grads
    B = cache.sigma.shape[0]
    g_acc = np.zeros(B) if g_acc is None else g_acc
    g_depth = np.zeros(B) if g_depth is None else g_depth
    g_sigma, g_rgb = _kernels.composite_backward(
        cache.sigma, cache.rgb, cache.delta, cache.tvals, cache.bg, cache.weights, cache.trans,
        np.ascontiguousarray(g_color, dtype=np.float64), np.ascontiguousarray(g_acc, dtype=np.float64),
        np.ascontiguousarray(g_depth, dtype=np.float64))
    idx = cache.active
    if not len(idx):
        return grads, plane_grads
    gs = g_sigma.reshape(-1)[idx]
    gr = g_rgb.reshape(-1, 3)[idx]
    g_den = density_backward(cache.den_feat, gs, model.density_shift)
    query_backward(model.field, cache.den_rec, g_den, plane_grads, grads)
    g_in, g_mlp = model.mlp.backward(cache.mlp_cache, gr)
    for k, v in g_mlp.items():
        key = "mlp." + k
        grads[key] = grads[key] + v if key in grads else v
    F = model.field.spec.out_dim
    query_backward(model.field, cache.app_rec, g_in[:, :F], plane_grads, grads)
    return grads, plane_grads


# -------------------------------------------------------------------- images


def worker_count(requested=None):
    """Worker threads: ``requested`` (default: CPU count) capped by ``DAREPLANE_THREADS``."""
    n = requested if requested is not None else (os.cpu_count() or 1)
    cap = os.environ.get("DAREPLANE_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ValueError(f"DAREPLANE_THREADS must be an integer, got {cap!r}") from None
    return max(1, int(n))


CHUNK_RAYS = 2048


def render_image(job, model, voxel=None, workers=None, jitter=True):
    """Render a full frame.  Returns ``(Image, depth (H, W), opacity (H, W))``.

    Rays are cut into fixed-size chunks that workers process independently,
    so the output does not depend on the number of workers.
    """
    cam = job.camera
    pixels = cam.pixel_grid()
    origins, dirs = generate_rays(cam, pixels)
    n = len(pixels)
    planes = model.field.materialize()
    color = np.empty((n, 3))
    acc = np.empty(n)
    depth = np.empty(n)

    def run(start):
        sl = slice(start, min(start + CHUNK_RAYS, n))
        ids = np.arange(sl.start, sl.stop)
        jit = uniform_stream(job.seed, job.frame, ids, job.samples) if jitter else None
        c, a, d, _ = render_rays(model, origins[sl], dirs[sl], job.time, job.samples, job.near, job.far,
                                 job.background, jit, voxel, planes)
        color[sl], acc[sl], depth[sl] = c, a, d

    starts = range(0, n, CHUNK_RAYS)
    nw = worker_count(workers)
    if nw == 1:
        for s in starts:
            run(s)
    else:
        with ThreadPoolExecutor(max_workers=nw) as ex:
            list(ex.map(run, starts))
    H, W = cam.height, cam.width
    img = Image(np.clip(color, 0.0, 1.0).reshape(H, W, 3))
    return img, depth.reshape(H, W), acc.reshape(H, W)
