"""Trainable straight-through masks over coefficient grids.

A mask logit ``M`` gates a coefficient grid ``W``.  In ``"ste"`` mode the
forward value is ``H(M) * W`` (a hard gate) while gradients follow the
sigmoid surrogate ``sigmoid(M) * W``.  ``"soft"`` mode uses the surrogate in
the forward pass as well; it shares the backward code and is what makes the
mask path checkable by finite differences.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "MASK_INIT",
    "sigmoid",
    "apply_mask",
    "apply_mask_backward",
    "mask_loss",
    "mask_loss_grad",
    "sparsity",
    "binarize",
]

MASK_INIT = 2.0


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _check(w, m):
    if np.shape(w) != np.shape(m):
        raise ValueError(f"mask shape {np.shape(m)} does not match grid shape {np.shape(w)}")


def apply_mask(w, m, mode="ste"):
    """Gate ``w`` by mask logits ``m``.  ``mode`` is ``"ste"`` or ``"soft"``."""
    _check(w, m)
    w = np.asarray(w, dtype=np.float64)
    if mode == "ste":
        return np.where(np.asarray(m) > 0, w, 0.0)
    if mode == "soft":
        return sigmoid(m) * w
    raise ValueError(f"unknown mask mode {mode!r}")


def apply_mask_backward(w, m, grad):
    """Surrogate gradients ``(dL/dW, dL/dM)`` given ``dL/d(masked)``."""
    _check(w, m)
    s = sigmoid(m)
    return s * grad, s * (1.0 - s) * np.asarray(w) * grad


def _entries(masks):
    if isinstance(masks, dict):
        return list(masks.values())
    if isinstance(masks, np.ndarray):
        return [masks]
    return list(masks)


def mask_loss(masks):
    """Sum of ``sigmoid(M)`` over every mask entry."""
    return float(sum(sigmoid(m).sum() for m in _entries(masks)))


def mask_loss_grad(m):
    s = sigmoid(m)
    return s * (1.0 - s)


def sparsity(masks):
    """Fraction of mask entries that switch their coefficient off (``M <= 0``)."""
    arrays = _entries(masks)
    total = sum(a.size for a in arrays)
    if total == 0:
        return 0.0
    return float(sum(int(np.count_nonzero(np.asarray(a) <= 0)) for a in arrays)) / total


def binarize(m):
    return (np.asarray(m) > 0).astype(np.uint8)
