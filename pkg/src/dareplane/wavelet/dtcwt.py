"""2D dual-tree complex wavelet transform.

Coefficient layout for an ``m x n`` plane at ``levels = L``:

* ``approx``: real lowpass of the last level, ``(m / 2**(L-1), n / 2**(L-1))``.
  At level 1 this is the undecimated lowpass, i.e. the four tree-combination
  subimages interleaved 2x2.
* ``real[l]``, ``imag[l]``: six oriented subbands at level ``l + 1``, each
  ``(m / 2**(l+1), n / 2**(l+1))``, stacked on axis ``-3``.

All functions accept arbitrary leading batch dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .filters import get_filter_bank
from .ops1d import odd_filter_matrix, qshift_analysis_matrices, qshift_synthesis_matrices

__all__ = [
    "DtcwtCoeffs",
    "ORIENTATIONS",
    "dtcwt2d_forward",
    "dtcwt2d_inverse",
    "dtcwt2d_forward_adjoint",
    "dtcwt2d_inverse_adjoint",
    "q2c",
    "c2q",
]

# Nominal ridge orientation (degrees, counter-clockwise from +x with y pointing
# up, i.e. towards row 0) of real subband k.  Pairs (0, 5), (1, 4), (2, 3)
# come from the same separable highpass image.
ORIENTATIONS = (75.0, 45.0, 15.0, -15.0, -45.0, -75.0)

_SQRT_HALF = np.sqrt(0.5)


@dataclass
class DtcwtCoeffs:
    approx: np.ndarray
    real: list
    imag: list
    source_shape: tuple

    @property
    def levels(self):
        return len(self.real)

    def grids(self):
        """Flat list of 2D-grid arrays in archive order.

        approx first, then for each level the six real subbands followed by
        the six imaginary subbands.  Each entry keeps the batch dimensions.
        """
        out = [self.approx]
        for re, im in zip(self.real, self.imag):
            out.extend(re[..., k, :, :] for k in range(6))
            out.extend(im[..., k, :, :] for k in range(6))
        return out

    @classmethod
    def from_grids(cls, grids, levels, source_shape):
        grids = list(grids)
        approx = np.asarray(grids[0], dtype=np.float64)
        real, imag = [], []
        pos = 1
        for _ in range(levels):
            real.append(np.stack(grids[pos:pos + 6], axis=-3))
            imag.append(np.stack(grids[pos + 6:pos + 12], axis=-3))
            pos += 12
        return cls(approx, real, imag, tuple(source_shape))

    def arrays(self):
        return [self.approx, *self.real, *self.imag]

    def map(self, fn):
        return DtcwtCoeffs(fn(self.approx), [fn(a) for a in self.real],
                           [fn(a) for a in self.imag], self.source_shape)

    def zip_map(self, other, fn):
        return DtcwtCoeffs(
            fn(self.approx, other.approx),
            [fn(a, b) for a, b in zip(self.real, other.real)],
            [fn(a, b) for a, b in zip(self.imag, other.imag)],
            self.source_shape,
        )

    def dot(self, other):
        """Euclidean inner product over all coefficients (batch summed)."""
        return float(sum(np.vdot(a, b) for a, b in zip(self.arrays(), other.arrays())))

    def energy(self):
        return self.dot(self)

    def count(self):
        """Number of scalar coefficients per plane (batch dims excluded)."""
        m, n = self.source_shape
        total = (m >> (self.levels - 1)) * (n >> (self.levels - 1))
        for lev in range(1, self.levels + 1):
            total += 12 * (m >> lev) * (n >> lev)
        return total


def q2c(y):
    """Combine 2x2 tree blocks into two complex subbands (orthonormal)."""
    a = y[..., 0::2, 0::2]
    b = y[..., 0::2, 1::2]
    c = y[..., 1::2, 0::2]
    d = y[..., 1::2, 1::2]
    z1 = ((a - d) + 1j * (b + c)) * _SQRT_HALF
    z2 = ((a + d) + 1j * (b - c)) * _SQRT_HALF
    return z1, z2


def c2q(z1, z2):
    """Inverse (and transpose) of :func:`q2c`."""
    shape = z1.shape[:-2] + (2 * z1.shape[-2], 2 * z1.shape[-1])
    y = np.empty(shape)
    y[..., 0::2, 0::2] = (z1.real + z2.real) * _SQRT_HALF
    y[..., 1::2, 1::2] = (z2.real - z1.real) * _SQRT_HALF
    y[..., 0::2, 1::2] = (z1.imag + z2.imag) * _SQRT_HALF
    y[..., 1::2, 0::2] = (z1.imag - z2.imag) * _SQRT_HALF
    return y


def _check_shape(shape, levels):
    if levels < 1:
        raise ValueError("levels must be >= 1")
    m, n = shape[-2:]
    step = 1 << levels
    if m % step or n % step:
        raise ValueError(f"plane shape {(m, n)} not divisible by 2**{levels}")


def _analysis(x, c0, c1, r0, r1):
    lo_r = x @ r0.T
    hi_r = x @ r1.T
    return c0 @ lo_r, c0 @ hi_r, c1 @ lo_r, c1 @ hi_r


def _synthesis(lolo, lh, hl, hh, c0, c1, r0, r1):
    lo_r = c0 @ lolo + c1 @ hl
    hi_r = c0 @ lh + c1 @ hh
    return lo_r @ r0.T + hi_r @ r1.T


def _pack(lh, hh, hl):
    z0, z5 = q2c(lh)
    z1, z4 = q2c(hh)
    z2, z3 = q2c(hl)
    z = np.stack([z0, z1, z2, z3, z4, z5], axis=-3)
    return np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag)


def _unpack(re, im):
    z = re + 1j * im
    lh = c2q(z[..., 0, :, :], z[..., 5, :, :])
    hh = c2q(z[..., 1, :, :], z[..., 4, :, :])
    hl = c2q(z[..., 2, :, :], z[..., 3, :, :])
    return lh, hh, hl


def _level1_mats(fb, m, n, which):
    b = fb.biort
    if which == "analysis":
        f0, f1 = b.h0, b.h1
    else:
        f0, f1 = b.g0, b.g1
    return (odd_filter_matrix(f0, m), odd_filter_matrix(f1, m),
            odd_filter_matrix(f0, n), odd_filter_matrix(f1, n))


def _qshift_mats(fb, m, n, which):
    if which == "analysis":
        c0, c1 = qshift_analysis_matrices(fb.qshift, m)
        r0, r1 = qshift_analysis_matrices(fb.qshift, n)
    else:
        c0, c1 = qshift_synthesis_matrices(fb.qshift, m)
        r0, r1 = qshift_synthesis_matrices(fb.qshift, n)
    return c0, c1, r0, r1


def _level_shapes(shape, levels):
    m, n = shape[-2:]
    # level 1 is undecimated, so levels 1 and 2 both see the full size
    return [(m >> max(lev - 1, 0), n >> max(lev - 1, 0)) for lev in range(levels)]


def _run_analysis(x, levels, fb, mats_for_level):
    real, imag = [], []
    lo = x
    for lev, (m, n) in enumerate(_level_shapes(x.shape, levels)):
        lolo, lh, hl, hh = _analysis(lo, *mats_for_level(lev, m, n))
        re, im = _pack(lh, hh, hl)
        real.append(re)
        imag.append(im)
        lo = lolo
    return DtcwtCoeffs(lo, real, imag, tuple(x.shape[-2:]))


def _run_synthesis(c, fb, mats_for_level):
    shapes = _level_shapes(c.source_shape, c.levels)
    lo = c.approx
    for lev in range(c.levels - 1, -1, -1):
        m, n = shapes[lev]
        lh, hh, hl = _unpack(c.real[lev], c.imag[lev])
        lo = _synthesis(lo, lh, hl, hh, *mats_for_level(lev, m, n))
    return lo


def _forward_mats(fb):
    def mats(lev, m, n):
        return _level1_mats(fb, m, n, "analysis") if lev == 0 else _qshift_mats(fb, m, n, "analysis")
    return mats


def _inverse_mats(fb):
    def mats(lev, m, n):
        return _level1_mats(fb, m, n, "synthesis") if lev == 0 else _qshift_mats(fb, m, n, "synthesis")
    return mats


def _transposed(mats_fn):
    def mats(lev, m, n):
        return tuple(a.T for a in mats_fn(lev, m, n))
    return mats


def dtcwt2d_forward(plane, levels=1, fb="near_sym_a"):
    """Forward DTCWT of ``plane`` (shape ``(..., m, n)``)."""
    fb = get_filter_bank(fb)
    x = np.asarray(plane, dtype=np.float64)
    _check_shape(x.shape, levels)
    return _run_analysis(x, levels, fb, _forward_mats(fb))


def dtcwt2d_inverse(c, fb="near_sym_a"):
    """Inverse DTCWT; ``dtcwt2d_inverse(dtcwt2d_forward(x)) == x``."""
    fb = get_filter_bank(fb)
    _validate(c)
    return _run_synthesis(c, fb, _inverse_mats(fb))


def dtcwt2d_forward_adjoint(c, fb="near_sym_a"):
    """Transpose of the forward transform: coefficients -> plane."""
    fb = get_filter_bank(fb)
    _validate(c)
    return _run_synthesis(c, fb, _transposed(_forward_mats(fb)))


def dtcwt2d_inverse_adjoint(plane, levels=1, fb="near_sym_a"):
    """Transpose of the inverse transform: plane -> coefficients.

    This is what carries gradients from a materialised plane back onto its
    wavelet coefficients.
    """
    fb = get_filter_bank(fb)
    x = np.asarray(plane, dtype=np.float64)
    _check_shape(x.shape, levels)
    return _run_analysis(x, levels, fb, _transposed(_inverse_mats(fb)))


def _validate(c):
    m, n = c.source_shape
    _check_shape((m, n), c.levels)
    L = c.levels
    want = (m >> (L - 1), n >> (L - 1))
    if c.approx.shape[-2:] != want:
        raise ValueError(f"approximation grid {c.approx.shape[-2:]} inconsistent with source {(m, n)}")
    for lev in range(L):
        sub = (6, m >> (lev + 1), n >> (lev + 1))
        if c.real[lev].shape[-3:] != sub or c.imag[lev].shape[-3:] != sub:
            raise ValueError(f"level {lev + 1} subbands must have shape {sub}")
