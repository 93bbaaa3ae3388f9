"""A uniform "coefficient grids <-> plane" interface over DTCWT and DWT.

The field stores each plane as a list of coefficient grids.  A basis knows
the grid shapes for a given plane size and how to move between the two
domains, including the adjoint of synthesis used for back-propagation.
Every grid keeps the leading batch (rank) dimension of the planes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dtcwt import (
    DtcwtCoeffs,
    dtcwt2d_forward,
    dtcwt2d_inverse,
    dtcwt2d_inverse_adjoint,
)
from .dwt import DwtCoeffs, dwt2d_forward, dwt2d_inverse, dwt2d_inverse_adjoint
from .filters import get_filter_bank
from .dwt import _canonical as _dwt_name

__all__ = ["PlaneBasis", "make_basis"]


@dataclass(frozen=True)
class PlaneBasis:
    """``kind`` is ``"dtcwt"`` or ``"dwt"``; ``name`` the filter bank / wavelet."""

    kind: str
    name: str
    level: int = 1

    def grid_shapes(self, shape):
        m, n = shape
        self.check_shape(shape)
        L = self.level
        if self.kind == "dtcwt":
            out = [(m >> (L - 1), n >> (L - 1))]
            for lev in range(1, L + 1):
                out += [(m >> lev, n >> lev)] * 12
            return out
        out = [(m >> L, n >> L)]
        for lev in range(1, L + 1):
            out += [(m >> lev, n >> lev)] * 3
        return out

    def grid_kinds(self, shape):
        """Label per grid: ``"approx"`` or ``"detail"``."""
        return ["approx"] + ["detail"] * (len(self.grid_shapes(shape)) - 1)

    def count(self, shape):
        return sum(a * b for a, b in self.grid_shapes(shape))

    def check_shape(self, shape):
        step = 1 << self.level
        if shape[0] % step or shape[1] % step:
            raise ValueError(f"plane shape {tuple(shape)} not divisible by 2**{self.level}")

    def analyze(self, planes):
        planes = np.asarray(planes, dtype=np.float64)
        if self.kind == "dtcwt":
            return [np.ascontiguousarray(g) for g in dtcwt2d_forward(planes, self.level, self.name).grids()]
        return [np.ascontiguousarray(g) for g in dwt2d_forward(planes, self.level, self.name).grids()]

    def synthesize(self, grids, shape):
        return self._inverse(grids, shape)

    def synthesize_adjoint(self, planes):
        """Transpose of :meth:`synthesize`: plane gradients -> grid gradients."""
        planes = np.asarray(planes, dtype=np.float64)
        if self.kind == "dtcwt":
            c = dtcwt2d_inverse_adjoint(planes, self.level, self.name)
        else:
            c = dwt2d_inverse_adjoint(planes, self.level, self.name)
        return [np.ascontiguousarray(g) for g in c.grids()]

    def _inverse(self, grids, shape):
        if self.kind == "dtcwt":
            c = DtcwtCoeffs.from_grids(grids, self.level, shape)
            return dtcwt2d_inverse(c, self.name)
        c = DwtCoeffs.from_grids(grids, self.level, shape)
        return dwt2d_inverse(c, self.name)


def make_basis(kind="dtcwt", name=None, level=1):
    kind = str(kind).lower()
    if kind == "dtcwt":
        fb = get_filter_bank(name or "near_sym_a")
        return PlaneBasis("dtcwt", fb.name, int(level))
    if kind == "dwt":
        return PlaneBasis("dwt", _dwt_name(name or "bior44"), int(level))
    raise ValueError(f"unknown basis kind {kind!r}")
