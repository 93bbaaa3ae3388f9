"""Losses, Adam, the coarse-to-fine schedule and the fitting loop.

Gradients are hand-written adjoints: compositing -> density / colour MLP ->
feature mixing -> bilinear sampling -> wavelet synthesis -> masks.
"""

from __future__ import annotations

import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from .grid import Image, psnr, ssim
from .rep import upsample_field
from .render import (
    RenderJob,
    build_emptiness,
    generate_rays,
    render_image,
    render_rays,
    render_rays_backward,
    uniform_stream,
    worker_count,
)
from .sparsity import mask_loss, mask_loss_grad, sparsity

__all__ = [
    "LossWeights",
    "AdamState",
    "Schedule",
    "TrainConfig",
    "NumericAbort",
    "photometric_mse",
    "photometric_mse_grad",
    "tv_loss",
    "tv_loss_grad",
    "masked_l1_color",
    "masked_l1_color_grad",
    "pcc_depth_loss",
    "pcc_depth_loss_grad",
    "adam_step",
    "param_group",
    "clip_global_norm",
    "RayBatch",
    "batch_loss",
    "gradcheck",
    "View",
    "FitResult",
    "fit",
    "evaluate",
]


def _arr(x):
    return x.data if isinstance(x, Image) else np.asarray(x, dtype=np.float64)


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


# -------------------------------------------------------------------- losses


@dataclass(frozen=True)
class LossWeights:
    photo: float = 1.0
    reg_spatial: float = 1e-5
    reg_temporal: float = 2e-5
    mask: float = 1e-11

    def __post_init__(self):
        for name in ("photo", "reg_spatial", "reg_temporal", "mask"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"loss weight {name} must be finite and non-negative")


def photometric_mse(pred, gt):
    a, b = _arr(pred), _arr(gt)
    _same_shape(a, b)
    return float(np.mean((a - b) ** 2))


def photometric_mse_grad(pred, gt):
    a, b = _arr(pred), _arr(gt)
    return 2.0 * (a - b) / a.size


def tv_loss(plane):
    """Mean squared forward difference along rows plus the same along columns.

    A stack ``(R, m, n)`` contributes the sum of its slices' values.
    """
    p = np.asarray(plane, dtype=np.float64)
    if p.shape[-1] < 2 or p.shape[-2] < 2:
        raise ValueError("total variation needs at least 2x2 planes")
    dv = np.diff(p, axis=-2)
    dh = np.diff(p, axis=-1)
    per = (dv ** 2).mean(axis=(-2, -1)) + (dh ** 2).mean(axis=(-2, -1))
    return float(np.sum(per))


def tv_loss_grad(plane):
    p = np.asarray(plane, dtype=np.float64)
    m, n = p.shape[-2:]
    dv = np.diff(p, axis=-2) * (2.0 / ((m - 1) * n))
    dh = np.diff(p, axis=-1) * (2.0 / (m * (n - 1)))
    g = np.zeros_like(p)
    g[..., 1:, :] += dv
    g[..., :-1, :] -= dv
    g[..., :, 1:] += dh
    g[..., :, :-1] -= dh
    return g


def _mask(mask, like):
    m = _arr(mask).astype(bool)
    if m.ndim == like.ndim - 1:
        m = m[..., None]
    return np.broadcast_to(m, like.shape)


def masked_l1_color(pred, gt, tool_mask):
    """Sum of ``|pred - gt|`` over every channel of the masked-in pixels."""
    a, b = _arr(pred), _arr(gt)
    _same_shape(a, b)
    m = _mask(tool_mask, a)
    return float(np.abs(a - b)[m].sum())


def masked_l1_color_grad(pred, gt, tool_mask):
    a, b = _arr(pred), _arr(gt)
    return np.sign(a - b) * _mask(tool_mask, a)


def _pcc_parts(pred, gt, mask):
    x, y = _arr(pred), _arr(gt)
    _same_shape(x, y)
    m = np.ones(x.shape, dtype=bool) if mask is None else _arr(mask).astype(bool).reshape(x.shape)
    return x, y, m


def pcc_depth_loss(pred_depth, gt_depth, mask=None):
    """``1 - corr(pred, gt)`` over masked-in pixels; 1 when either side is constant."""
    x, y, m = _pcc_parts(pred_depth, gt_depth, mask)
    xs, ys = x[m], y[m]
    if xs.size < 2:
        raise ValueError("correlation needs at least two masked-in pixels")
    xc, yc = xs - xs.mean(), ys - ys.mean()
    vx, vy = float(xc @ xc), float(yc @ yc)
    if vx == 0.0 or vy == 0.0:
        return 1.0
    return float(1.0 - (xc @ yc) / math.sqrt(vx * vy))


def pcc_depth_loss_grad(pred_depth, gt_depth, mask=None):
    """Gradient of :func:`pcc_depth_loss` w.r.t. the predicted depth."""
    x, y, m = _pcc_parts(pred_depth, gt_depth, mask)
    g = np.zeros_like(x)
    xs, ys = x[m], y[m]
    xc, yc = xs - xs.mean(), ys - ys.mean()
    vx, vy = float(xc @ xc), float(yc @ yc)
    if vx == 0.0 or vy == 0.0:
        return g
    r = (xc @ yc) / math.sqrt(vx * vy)
    g[m] = -(yc / math.sqrt(vx * vy) - r * xc / vx)
    return g


# ---------------------------------------------------------------- optimiser


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    step: int = 0
    m: dict = dc_field(default_factory=dict)
    v: dict = dc_field(default_factory=dict)

    def reset(self, keys):
        for k in keys:
            self.m.pop(k, None)
            self.v.pop(k, None)


def adam_step(state, params, grads, lr):
    """Bias-corrected Adam update of ``params`` in place.

    ``lr`` is a scalar or a ``{key: lr}`` mapping.  Parameters missing from
    ``grads`` see a zero gradient.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            g = np.zeros_like(p)
        m = state.m.get(k)
        if m is None or m.shape != p.shape:
            m = state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        v = state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        step = lr[k] if isinstance(lr, dict) else lr
        p -= step * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


_NET = re.compile(r"^(vrf|mlp\..*|head\..*|(den|app)\.v\d+)$")


def param_group(key):
    """``"net"`` for basis vectors, the mixer and MLP weights; ``"plane"`` otherwise."""
    return "net" if _NET.match(key) else "plane"


def clip_global_norm(grads, max_norm):
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


@dataclass(frozen=True)
class Schedule:
    """Step indices for grid upsampling (with target ``(N, T)``) and emptiness rebuilds."""

    total_steps: int = 2000
    upsample_steps: tuple = (400, 800, 1400)
    upsample_targets: tuple = ()
    emptiness_steps: tuple = (600, 1000, 1600)

    def __post_init__(self):
        for name in ("upsample_steps", "emptiness_steps"):
            s = tuple(int(x) for x in getattr(self, name))
            object.__setattr__(self, name, s)
            if any(b <= a for a, b in zip(s, s[1:])):
                raise ValueError(f"{name} must be strictly increasing")
            if any(x <= 0 or x >= max(self.total_steps, 1) for x in s):
                raise ValueError(f"{name} must lie inside (0, total_steps)")
        targets = tuple(tuple(int(v) for v in t) for t in self.upsample_targets)
        object.__setattr__(self, "upsample_targets", targets)
        if targets and len(targets) != len(self.upsample_steps):
            raise ValueError("one upsample target per upsample step is required")

    @classmethod
    def doubling(cls, total_steps, upsample_steps, emptiness_steps, N, T):
        """Targets that double N at each upsample step while T stays fixed."""
        targets = tuple((N << (i + 1), T) for i in range(len(upsample_steps)))
        return cls(total_steps, tuple(upsample_steps), targets, tuple(emptiness_steps))


class NumericAbort(RuntimeError):
    def __init__(self, step, message="non-finite loss"):
        super().__init__(f"{message} at step {step}")
        self.step = step


@dataclass
class TrainConfig:
    steps: int = 2000
    batch: int = 1024
    samples: int = 64
    lr_plane: float = 0.02
    lr_net: float = 0.001
    lr_decay: float = 0.1
    weights: LossWeights = dc_field(default_factory=LossWeights)
    schedule: Schedule = None
    emptiness_res: int = 32
    tau: float = 1e-4
    clip_norm: float = 10.0
    seed: int = 0
    workers: int = None
    chunk: int = 256
    background: tuple = (0.0, 0.0, 0.0)
    near: float = 0.0
    far: float = 10.0

    def __post_init__(self):
        if self.schedule is None:
            self.schedule = Schedule(self.steps, (), (), ())


# ----------------------------------------------------------- batch gradients


@dataclass
class RayBatch:
    origins: np.ndarray
    dirs: np.ndarray
    times: np.ndarray
    target: np.ndarray
    jitter: np.ndarray = None


def _chunk_grads(model, batch, sl, cfg, voxel, planes, n_total):
    c, _, _, cache = render_rays(
        model, batch.origins[sl], batch.dirs[sl], batch.times[sl], cfg.samples, cfg.near, cfg.far,
        cfg.background, None if batch.jitter is None else batch.jitter[sl], voxel, planes, keep_cache=True)
    diff = c - batch.target[sl]
    sq = float(np.sum(diff * diff))
    g_color = cfg.weights.photo * 2.0 * diff / (3.0 * n_total)
    grads, plane_grads = render_rays_backward(model, cache, g_color)
    return sq, grads, plane_grads


def _merge(into, part):
    for k, v in part.items():
        if k in into:
            into[k] += v
        else:
            into[k] = v


def batch_loss(model, batch, cfg, voxel=None, with_grad=True):
    """Total loss of a ray batch and (optionally) gradients keyed like ``model.trainables()``.

    Returns ``(loss, mse, grads)``.  Rays are processed in fixed chunks whose
    partial gradients are summed in chunk order, so results do not depend on
    the worker count.
    """
    field = model.field
    planes = field.materialize()
    B = len(batch.origins)
    slices = [slice(s, min(s + cfg.chunk, B)) for s in range(0, B, cfg.chunk)]
    nw = worker_count(cfg.workers)
    run = lambda sl: _chunk_grads(model, batch, sl, cfg, voxel, planes, B)  # noqa: E731
    if nw == 1 or len(slices) == 1:
        parts = [run(sl) for sl in slices]
    else:
        with ThreadPoolExecutor(max_workers=nw) as ex:
            parts = list(ex.map(run, slices))
    sq = sum(p[0] for p in parts)
    mse = sq / (3.0 * B)
    w = cfg.weights
    loss = w.photo * mse
    grads, plane_grads = {}, {}
    for _, g, pg in parts:
        _merge(grads, g)
        _merge(plane_grads, pg)
    for pk, stack in planes.items():
        lam = w.reg_temporal if "t" in pk.split(".")[1] else w.reg_spatial
        if lam > 0:
            loss += lam * tv_loss(stack)
            if with_grad:
                _merge(plane_grads, {pk: lam * tv_loss_grad(stack)})
    if field.use_masks and field.masks:
        if w.mask > 0:
            loss += w.mask * mask_loss(field.masks)
        if with_grad:
            for k, m in field.masks.items():
                if w.mask > 0:
                    _merge(grads, {"mask:" + k: w.mask * mask_loss_grad(m)})
    if with_grad:
        field.planes_backward(plane_grads, grads)
    return loss, mse, grads


def gradcheck(loss_fn, params, grads, rng, count=50, h=1e-4, keys=None):
    """Central finite differences at ``count`` random entries.

    ``loss_fn()`` must re-evaluate the loss from the current contents of
    ``params``.  Returns a list of ``(key, index, numeric, analytic)``.
    """
    rng = np.random.default_rng(rng)
    keys = list(params) if keys is None else list(keys)
    out = []
    for i in range(count):
        k = keys[i % len(keys)] if count >= len(keys) else keys[int(rng.integers(len(keys)))]
        p = params[k]
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        old = p[idx]
        p[idx] = old + h
        up = loss_fn()
        p[idx] = old - h
        down = loss_fn()
        p[idx] = old
        out.append((k, idx, (up - down) / (2 * h), float(grads.get(k, np.zeros_like(p))[idx])))
    return out


# --------------------------------------------------------------------- fitting


@dataclass
class View:
    image: np.ndarray
    camera: object
    time: float = 0.0
    frame: int = 0
    depth: np.ndarray = None


@dataclass
class FitResult:
    model: object
    voxel: object
    log: list
    metrics: dict


def _learning_rates(keys, cfg, step):
    decay = cfg.lr_decay ** (step / max(cfg.steps, 1))
    base = {"plane": cfg.lr_plane * decay, "net": cfg.lr_net * decay}
    return {k: base[param_group(k)] for k in keys}, base["plane"]


def _all_rays(views):
    o, d, t, c, ids = [], [], [], [], []
    for vi, v in enumerate(views):
        oo, dd = generate_rays(v.camera, v.camera.pixel_grid())
        o.append(oo)
        d.append(dd)
        t.append(np.full(len(oo), float(v.time)))
        c.append(np.asarray(v.image, dtype=np.float64).reshape(-1, 3))
        ids.append(vi * (1 << 32) + np.arange(len(oo)))
    return np.concatenate(o), np.concatenate(d), np.concatenate(t), np.concatenate(c), np.concatenate(ids)


def evaluate(model, views, cfg, voxel=None):
    """Per-view PSNR/SSIM on held-out views, rendered without jitter."""
    rows = []
    for v in views:
        job = RenderJob(v.camera, v.time, cfg.samples, cfg.near, cfg.far, cfg.background, cfg.seed, v.frame)
        img, _, _ = render_image(job, model, voxel, cfg.workers, jitter=False)
        gt = Image(np.asarray(v.image, dtype=np.float64))
        rows.append({"frame": v.frame, "time": v.time, "psnr": psnr(img, gt), "ssim": ssim(img, gt), "image": img})
    return rows


def fit(model, train_views, test_views, cfg, log_path=None, on_step=None):
    """Optimise ``model`` on ``train_views``; returns a :class:`FitResult`.

    Raises :class:`NumericAbort` when the loss or gradients become non-finite.
    """
    rng = np.random.default_rng(cfg.seed)
    origins, dirs, times, colors, ray_ids = _all_rays(train_views)
    state = AdamState()
    sched = cfg.schedule
    voxel = None
    log = []
    fh = open(log_path, "w") if log_path else None
    try:
        for step in range(cfg.steps):
            if step in sched.upsample_steps and sched.upsample_targets:
                N, T = sched.upsample_targets[sched.upsample_steps.index(step)]
                old = {k: v.shape for k, v in model.trainables().items()}
                model.field = upsample_field(model.field, N, T)
                state.reset([k for k, v in model.trainables().items() if old.get(k) != v.shape])
            if step in sched.emptiness_steps:
                voxel = build_emptiness(model, cfg.emptiness_res, cfg.tau)
            pick = rng.integers(0, len(origins), cfg.batch)
            jitter = uniform_stream(cfg.seed, step, ray_ids[pick], cfg.samples)
            batch = RayBatch(origins[pick], dirs[pick], times[pick], colors[pick], jitter)
            loss, mse, grads = batch_loss(model, batch, cfg, voxel)
            if not math.isfinite(loss):
                raise NumericAbort(step)
            params = model.trainables()
            gnorm = clip_global_norm(grads, cfg.clip_norm)
            if not math.isfinite(gnorm):
                raise NumericAbort(step, "non-finite gradient")
            lrs, lr_plane = _learning_rates(params, cfg, step)
            adam_step(state, params, grads, lrs)
            model.field.mark_dirty()
            sp = sparsity(model.field.masks) if model.field.use_masks and model.field.masks else 0.0
            line = f"{step}\t{loss:.10g}\t{_psnr_from_mse(mse):.6f}\t{sp:.6f}\t{lr_plane:.6g}"
            log.append(line)
            if fh:
                fh.write(line + "\n")
            if on_step:
                on_step(step, loss, mse)
    finally:
        if fh:
            fh.close()
    rows = evaluate(model, test_views, cfg, voxel) if test_views else []
    metrics = {
        "views": rows,
        "psnr": float(np.mean([r["psnr"] for r in rows])) if rows else float("nan"),
        "ssim": float(np.mean([r["ssim"] for r in rows])) if rows else float("nan"),
        "sparsity": sparsity(model.field.masks) if model.field.masks else 0.0,
    }
    return FitResult(model, voxel, log, metrics)


def _psnr_from_mse(mse):
    return float("inf") if mse == 0 else -10.0 * math.log10(mse)
