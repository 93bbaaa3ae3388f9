"""Dual-tree complex and real discrete wavelet transforms on 2D grids."""

from .analysis import (
    angular_distance,
    dominant_orientation,
    shift_energy_variation,
    subband_energies,
    subband_impulse_responses,
    subband_orientations,
)
from .basis import PlaneBasis, make_basis
from .dtcwt import (
    ORIENTATIONS,
    DtcwtCoeffs,
    c2q,
    dtcwt2d_forward,
    dtcwt2d_forward_adjoint,
    dtcwt2d_inverse,
    dtcwt2d_inverse_adjoint,
    q2c,
)
from .dwt import (
    DWT_WAVELETS,
    DwtCoeffs,
    dwt2d_forward,
    dwt2d_forward_adjoint,
    dwt2d_inverse,
    dwt2d_inverse_adjoint,
)
from .filters import BIORT_NAMES, QSHIFT_NAMES, FilterBank, get_filter_bank

__all__ = [
    "BIORT_NAMES",
    "QSHIFT_NAMES",
    "DWT_WAVELETS",
    "ORIENTATIONS",
    "DtcwtCoeffs",
    "DwtCoeffs",
    "FilterBank",
    "PlaneBasis",
    "angular_distance",
    "c2q",
    "dominant_orientation",
    "dtcwt2d_forward",
    "dtcwt2d_forward_adjoint",
    "dtcwt2d_inverse",
    "dtcwt2d_inverse_adjoint",
    "dwt2d_forward",
    "dwt2d_forward_adjoint",
    "dwt2d_inverse",
    "dwt2d_inverse_adjoint",
    "get_filter_bank",
    "make_basis",
    "q2c",
    "shift_energy_variation",
    "subband_energies",
    "subband_impulse_responses",
    "subband_orientations",
]
