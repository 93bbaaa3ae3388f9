"""Synthetic scenes with analytic ground truth.

Every scene is an axis-aligned box inside the unit cube, seen by pinhole
cameras on a ring around the vertical axis.  Ground-truth images and depths
come from exact ray-box intersection and a solid texture evaluated at the
hit point, so no reference renderer is involved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .render import Camera, generate_rays, look_at
from .train import View

__all__ = ["SCENES", "Scene", "ring_cameras", "box_hit", "make_scene", "dead_leaves"]

SCENES = ("constant", "textured-box", "rotating-texture-4d", "shifted-grating")


@dataclass
class Scene:
    name: str
    train: list
    test: list
    frames: int
    box: tuple
    background: tuple


def ring_cameras(count, width, height, radius=1.6, elevation=0.35, fov=40.0, phase=0.0):
    """``count`` cameras evenly spaced on a ring, all aimed at the cube centre."""
    centre = np.array([0.5, 0.5, 0.5])
    cams = []
    for i in range(count):
        a = phase + 2.0 * np.pi * i / count
        eye = centre + np.array([radius * np.cos(a), radius * np.sin(a), elevation])
        cams.append(Camera.from_fov(width, height, fov, look_at(eye, centre), eye))
    return cams


def box_hit(origins, dirs, lo, hi):
    """Entry distance and hit mask of rays against the box ``[lo, hi]^3``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    tmin = np.nanmax(np.minimum(t0, t1), axis=1)
    tmax = np.nanmin(np.maximum(t0, t1), axis=1)
    hit = (tmax >= tmax.dtype.type(0)) & (tmin <= tmax) & (tmin > 0)
    return tmin, hit


# --------------------------------------------------------------- textures


def _const_texture(color):
    c = np.asarray(color, dtype=np.float64)
    return lambda p, t: np.broadcast_to(c, (len(p), 3))


def _solid_texture(rng, waves=6, base_freq=3.0):
    """Sum of random oriented sinusoids in 3D, one set per colour channel."""
    dirs = rng.normal(size=(3, waves, 3))
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    freqs = base_freq * (1.0 + 2.0 * rng.random((3, waves)))
    phases = rng.uniform(0, 2 * np.pi, (3, waves))
    amps = rng.uniform(0.5, 1.0, (3, waves))
    amps /= amps.sum(axis=1, keepdims=True)

    def tex(p):
        arg = 2 * np.pi * np.einsum("pd,cwd->pcw", p, dirs * freqs[..., None]) + phases
        return 0.5 + 0.4 * np.sum(amps * np.sin(arg), axis=-1)

    return tex


def _rotating(tex, max_angle):
    centre = np.array([0.5, 0.5, 0.5])

    def f(p, t):
        a = max_angle * t
        c, s = np.cos(a), np.sin(a)
        q = p - centre
        rot = np.stack([c * q[:, 0] + s * q[:, 1], -s * q[:, 0] + c * q[:, 1], q[:, 2]], axis=1)
        return tex(rot + centre)

    return f


def _grating(period, shift_per_frame, frames):
    def f(p, t):
        frame = t * (frames - 1)
        v = 0.5 + 0.4 * np.sin(2 * np.pi * (p[:, 0] - shift_per_frame * frame) / period)
        return np.stack([v, v, v], axis=1)

    return f


# ------------------------------------------------------------------ scenes


def _render_gt(cam, tex, t, lo, hi, bg):
    o, d = generate_rays(cam, cam.pixel_grid())
    tmin, hit = box_hit(o, d, lo, hi)
    img = np.broadcast_to(np.asarray(bg, dtype=np.float64), (len(o), 3)).copy()
    depth = np.zeros(len(o))
    if hit.any():
        p = o[hit] + tmin[hit, None] * d[hit]
        img[hit] = tex(p, t)
        depth[hit] = tmin[hit]
    return img.reshape(cam.height, cam.width, 3), depth.reshape(cam.height, cam.width)


def make_scene(name, seed=0, width=32, height=32, n_train=8, n_test=2, frames=None):
    """Build a named scene.  ``frames`` defaults to 1 for static scenes."""
    if name not in SCENES:
        raise ValueError(f"unknown scene {name!r}; choose from {', '.join(SCENES)}")
    rng = np.random.default_rng(seed)
    bg = (0.0, 0.0, 0.0)
    if name == "constant":
        lo, hi = np.zeros(3), np.ones(3)
        color = 0.2 + 0.6 * rng.random(3)
        tex = _const_texture(color)
        frames = frames or 1
        # a narrow field of view keeps every pixel on the cube
        fov = 20.0
    elif name == "textured-box":
        lo, hi = np.full(3, 0.25), np.full(3, 0.75)
        solid = _solid_texture(rng)
        tex = lambda p, t: solid(p)  # noqa: E731
        frames = frames or 1
        fov = 40.0
    elif name == "rotating-texture-4d":
        lo, hi = np.full(3, 0.2), np.full(3, 0.8)
        tex = _rotating(_solid_texture(rng), np.pi / 2)
        frames = frames or 8
        fov = 40.0
    else:
        lo, hi = np.full(3, 0.2), np.full(3, 0.8)
        frames = frames or 2
        tex = _grating(period=0.125, shift_per_frame=1.0 / 64.0, frames=frames)
        fov = 40.0
    times = np.linspace(0.0, 1.0, frames) if frames > 1 else np.zeros(1)
    train_cams = ring_cameras(n_train, width, height, fov=fov)
    test_cams = ring_cameras(n_test, width, height, fov=fov, phase=np.pi / max(n_train, 1))
    train, test = [], []
    for f, t in enumerate(times):
        for cam in train_cams:
            img, depth = _render_gt(cam, tex, t, lo, hi, bg)
            train.append(View(img, cam, float(t), f, depth))
        for cam in test_cams:
            img, depth = _render_gt(cam, tex, t, lo, hi, bg)
            test.append(View(img, cam, float(t), f, depth))
    return Scene(name, train, test, frames, (tuple(lo), tuple(hi)), bg)


# ---------------------------------------------------------------- 2D texture


def dead_leaves(size, rng, rmin=2.0, rmax=40.0, max_discs=3000):
    """Occluding random discs with ``1/r^3`` radius density (a natural-image model).

    Discs are dropped front to back; each pixel keeps the grey level of the
    first disc that covers it.
    """
    rng = np.random.default_rng(rng)
    img = np.full((size, size), np.nan)
    a, b = 1.0 / rmin ** 2, 1.0 / rmax ** 2
    left = size * size
    for _ in range(max_discs):
        r = 1.0 / np.sqrt(a - rng.random() * (a - b))
        cy, cx = rng.random(2) * size
        grey = rng.random()
        # only the disc's bounding box can change
        y0, y1 = max(int(np.floor(cy - r)), 0), min(int(np.ceil(cy + r)) + 1, size)
        x0, x1 = max(int(np.floor(cx - r)), 0), min(int(np.ceil(cx + r)) + 1, size)
        if y0 >= y1 or x0 >= x1:
            continue
        yy, xx = np.ogrid[y0:y1, x0:x1]
        win = img[y0:y1, x0:x1]
        hit = ((yy - cy) ** 2 + (xx - cx) ** 2 <= r * r) & np.isnan(win)
        win[hit] = grey
        left -= int(hit.sum())
        if left == 0:
            break
    img[np.isnan(img)] = 0.5
    return img
