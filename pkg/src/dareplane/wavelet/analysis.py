"""Measurements on transforms: atom orientation and shift sensitivity."""

from __future__ import annotations

import numpy as np

from .dtcwt import dtcwt2d_forward, dtcwt2d_inverse
from .dwt import dwt2d_forward

__all__ = [
    "dominant_orientation",
    "subband_impulse_responses",
    "subband_orientations",
    "angular_distance",
    "subband_energies",
    "shift_energy_variation",
]


def dominant_orientation(img):
    """Ridge orientation (degrees in ``(-90, 90]``) from the structure tensor.

    The tensor is accumulated in the Fourier domain, ``J = sum |F(w)|^2 w w^T``,
    which uses exact derivatives and so does not under-weight content near
    Nyquist the way finite differences do.  Angles are measured
    counter-clockwise from +x (columns) with y pointing towards row 0.
    """
    img = np.asarray(img, dtype=np.float64)
    m, n = img.shape
    power = np.abs(np.fft.fft2(img)) ** 2
    wy = -2 * np.pi * np.fft.fftfreq(m)[:, None]
    wx = 2 * np.pi * np.fft.fftfreq(n)[None, :]
    jxx = float((power * wx * wx).sum())
    jyy = float((power * wy * wy).sum())
    jxy = float((power * wx * wy).sum())
    gradient = 0.5 * np.degrees(np.arctan2(2 * jxy, jxx - jyy))
    ridge = gradient + 90.0
    return float(90.0 - np.mod(90.0 - ridge, 180.0))


def angular_distance(a, b):
    """Distance between two undirected orientations in degrees, in ``[0, 90]``."""
    d = np.mod(np.asarray(a) - np.asarray(b), 180.0)
    return np.minimum(d, 180.0 - d)


def subband_impulse_responses(fb="near_sym_a", level=1, size=64, part="real"):
    """Planes reconstructed from one oriented subband of a centred impulse."""
    x = np.zeros((size, size))
    x[size // 2, size // 2] = 1.0
    c = dtcwt2d_forward(x, level, fb)
    out = []
    for k in range(6):
        z = c.map(np.zeros_like)
        src = c.real if part == "real" else c.imag
        dst = z.real if part == "real" else z.imag
        dst[level - 1][k] = src[level - 1][k]
        out.append(dtcwt2d_inverse(z, fb))
    return out


def subband_orientations(fb="near_sym_a", level=1, size=64, part="real"):
    return [dominant_orientation(r) for r in subband_impulse_responses(fb, level, size, part)]


def _centre_tile(a):
    h, w = a.shape[-2] // 3, a.shape[-1] // 3
    return a[..., h:2 * h, w:2 * w]


def subband_energies(transform, img, level=1, fb="near_sym_a", wavelet="haar"):
    """Detail energy per subband over one period of ``img``.

    ``img`` is treated as one period of a periodic signal: the transform is
    applied to a 3x3 tiling and only coefficients of the central tile are
    counted, so boundary handling plays no part.  DTCWT energies are complex
    magnitudes squared, one per direction and level; DWT energies are one per
    detail subband and level.
    """
    tiled = np.tile(np.asarray(img, dtype=np.float64), (3, 3))
    kind = str(transform).lower()
    if kind == "dtcwt":
        c = dtcwt2d_forward(tiled, level, fb)
        return np.array([
            float((_centre_tile(re[k]) ** 2 + _centre_tile(im[k]) ** 2).sum())
            for re, im in zip(c.real, c.imag) for k in range(6)
        ])
    if kind == "dwt":
        c = dwt2d_forward(tiled, level, wavelet)
        return np.array([float((_centre_tile(b) ** 2).sum()) for bands in c.details for b in bands])
    raise ValueError(f"unknown transform {transform!r}")


def shift_energy_variation(transform, img, shift, level=1, fb="near_sym_a", wavelet="haar"):
    """Largest relative change of a subband energy under a circular translation.

    ``shift`` is an integer column shift or a ``(rows, cols)`` pair.  Returns
    ``max_k |E_k(shifted) - E_k(img)| / E_k(img)``.  Subbands with no energy
    in either image contribute 0; a subband that gains energy from nothing
    contributes ``inf``.
    """
    img = np.asarray(img, dtype=np.float64)
    if np.isscalar(shift):
        shift = (0, int(shift))
    moved = np.roll(img, tuple(int(s) for s in shift), axis=(0, 1))
    e0 = subband_energies(transform, img, level, fb, wavelet)
    e1 = subband_energies(transform, moved, level, fb, wavelet)
    floor = 1e-12 * max(e0.sum(), e1.sum())
    worst = 0.0
    for a, b in zip(e0, e1):
        if a <= floor:
            if b > floor:
                return float("inf")
            continue
        worst = max(worst, abs(b - a) / a)
    return worst
