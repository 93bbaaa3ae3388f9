"""Separable real 2D discrete wavelet transform (the shift-variant baseline).

Two wavelets are provided: orthonormal Haar and the biorthogonal 4.4
(CDF 9/7) pair.  Boundaries use whole-sample symmetric extension, which
keeps the transform non-expansive: an ``m x n`` plane maps to exactly
``m * n`` coefficients.  Synthesis is the exact inverse of the boundary-
aware analysis operator.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .filters import BIORT

__all__ = ["DwtCoeffs", "DWT_WAVELETS", "dwt2d_forward", "dwt2d_inverse",
           "dwt2d_forward_adjoint", "dwt2d_inverse_adjoint", "dwt_matrices"]

DWT_WAVELETS = ("haar", "bior44")
_ALIASES = {"haar": "haar", "bior44": "bior44", "biorthogonal44": "bior44", "bior4.4": "bior44"}


def _canonical(name):
    key = str(name).lower().replace("_", "").replace("-", "").replace(" ", "")
    if key not in _ALIASES:
        raise ValueError(f"unknown DWT wavelet {name!r}")
    return _ALIASES[key]


@dataclass
class DwtCoeffs:
    """``approx`` plus one ``(lh, hl, hh)`` triple per level, finest first.

    The first letter names the filter applied down the columns (axis -2),
    the second the filter along rows (axis -1).
    """

    approx: np.ndarray
    details: list
    source_shape: tuple

    @property
    def levels(self):
        return len(self.details)

    def grids(self):
        out = [self.approx]
        for lh, hl, hh in self.details:
            out.extend((lh, hl, hh))
        return out

    @classmethod
    def from_grids(cls, grids, levels, source_shape):
        grids = list(grids)
        details = [tuple(grids[1 + 3 * i:4 + 3 * i]) for i in range(levels)]
        return cls(grids[0], details, tuple(source_shape))

    def count(self):
        m, n = self.source_shape
        return m * n

    def map(self, fn):
        """A new container with ``fn`` applied to every grid."""
        return DwtCoeffs.from_grids([fn(g) for g in self.grids()], self.levels, self.source_shape)


def _ws_reflect(idx, n):
    # whole-sample symmetric: x[-1] = x[1], x[n] = x[n-2]
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n - 2
    k = np.mod(idx, period)
    return np.where(k >= n, period - k, k)


def _banded(taps, n, phase):
    h = np.asarray(taps)
    c = (len(h) - 1) // 2
    rows = np.arange(n // 2)
    m = np.zeros((n // 2, n))
    for k, hk in enumerate(h):
        np.add.at(m, (rows, _ws_reflect(2 * rows + phase + c - k, n)), hk)
    return m


@lru_cache(maxsize=128)
def _matrices(wavelet, n):
    if wavelet == "haar":
        s = np.sqrt(0.5)
        lo = np.zeros((n // 2, n))
        hi = np.zeros((n // 2, n))
        r = np.arange(n // 2)
        lo[r, 2 * r] = lo[r, 2 * r + 1] = s
        hi[r, 2 * r] = s
        hi[r, 2 * r + 1] = -s
    else:
        pair = BIORT["antonini"]
        lo = _banded(np.sqrt(2.0) * pair.h0, n, 0)
        hi = _banded(np.sqrt(2.0) * pair.h1, n, 1)
    inv = np.linalg.inv(np.vstack([lo, hi]))
    g_lo, g_hi = inv[:, : n // 2], inv[:, n // 2:]
    for a in (lo, hi, g_lo, g_hi):
        a.setflags(write=False)
    return lo, hi, np.ascontiguousarray(g_lo), np.ascontiguousarray(g_hi)


def dwt_matrices(wavelet, n):
    """``(lo, hi, g_lo, g_hi)``: analysis ``(n/2, n)`` and synthesis ``(n, n/2)`` operators."""
    if n % 2:
        raise ValueError(f"DWT length must be even, got {n}")
    return _matrices(_canonical(wavelet), int(n))


def _check(shape, levels):
    if levels < 1:
        raise ValueError("levels must be >= 1")
    m, n = shape[-2:]
    step = 1 << levels
    if m % step or n % step:
        raise ValueError(f"plane shape {(m, n)} not divisible by 2**{levels}")


def _analyse(x, wavelet, transpose_synthesis=False):
    m, n = x.shape[-2:]
    cm, cn = dwt_matrices(wavelet, m), dwt_matrices(wavelet, n)
    if transpose_synthesis:
        c0, c1, r0, r1 = cm[2].T, cm[3].T, cn[2].T, cn[3].T
    else:
        c0, c1, r0, r1 = cm[0], cm[1], cn[0], cn[1]
    lo_r = x @ r0.T
    hi_r = x @ r1.T
    return c0 @ lo_r, c0 @ hi_r, c1 @ lo_r, c1 @ hi_r


def _synthesise(ll, lh, hl, hh, wavelet, transpose_analysis=False):
    m, n = 2 * ll.shape[-2], 2 * ll.shape[-1]
    cm, cn = dwt_matrices(wavelet, m), dwt_matrices(wavelet, n)
    if transpose_analysis:
        c0, c1, r0, r1 = cm[0].T, cm[1].T, cn[0].T, cn[1].T
    else:
        c0, c1, r0, r1 = cm[2], cm[3], cn[2], cn[3]
    lo_r = c0 @ ll + c1 @ hl
    hi_r = c0 @ lh + c1 @ hh
    return lo_r @ r0.T + hi_r @ r1.T


def _run_forward(plane, levels, wavelet, adjoint):
    x = np.asarray(plane, dtype=np.float64)
    _check(x.shape, levels)
    details = []
    for _ in range(levels):
        x, lh, hl, hh = _analyse(x, wavelet, adjoint)
        details.append((lh, hl, hh))
    return DwtCoeffs(x, details, tuple(plane.shape[-2:]))


def _run_inverse(c, wavelet, adjoint):
    _validate(c)
    x = c.approx
    for lh, hl, hh in reversed(c.details):
        x = _synthesise(x, lh, hl, hh, wavelet, adjoint)
    return x


def _validate(c):
    m, n = c.source_shape
    _check((m, n), c.levels)
    if c.approx.shape[-2:] != (m >> c.levels, n >> c.levels):
        raise ValueError("approximation grid inconsistent with source shape")
    for lev, bands in enumerate(c.details, start=1):
        for b in bands:
            if b.shape[-2:] != (m >> lev, n >> lev):
                raise ValueError(f"level {lev} detail grid has shape {b.shape[-2:]}")


def dwt2d_forward(plane, levels=1, wavelet="bior44"):
    return _run_forward(np.asarray(plane, dtype=np.float64), levels, wavelet, False)


def dwt2d_inverse(c, wavelet="bior44"):
    return _run_inverse(c, wavelet, False)


def dwt2d_forward_adjoint(c, wavelet="bior44"):
    return _run_inverse(c, wavelet, True)


def dwt2d_inverse_adjoint(plane, levels=1, wavelet="bior44"):
    return _run_forward(np.asarray(plane, dtype=np.float64), levels, wavelet, True)
