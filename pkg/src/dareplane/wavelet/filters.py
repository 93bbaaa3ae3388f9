"""Filter banks for the dual-tree complex wavelet transform.

Level 1 uses an odd-length, zero-phase biorthogonal pair applied without
decimation; the two trees are then the even and odd samples of the
filtered signal (the second tree is the one-sample-delayed copy).  Levels
two and above use a quarter-shift orthonormal pair, where tree ``a`` is the
time reverse of tree ``b``.

Only the two lowpass filters of each level-1 pair are stored.  Highpass
filters are obtained by zero-phase modulation, ``h1(w) = g0(w + pi)`` and
``g1(w) = h0(w + pi)``, which makes ``H0 G0 + H1 G1 = 1`` whenever the
lowpass product is halfband.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BIORT_NAMES",
    "QSHIFT_NAMES",
    "BiortPair",
    "QShiftPair",
    "FilterBank",
    "get_filter_bank",
    "modulate",
]

# Antonini 9/7 (CDF 9/7), DC gain 1.
_ANTONINI_H0 = [
    0.0267487574108101, -0.0168641184428747, -0.0782232665289905,
    0.2668641184428729, 0.6029490182363593, 0.2668641184428769,
    -0.0782232665289884, -0.0168641184428753, 0.0267487574108096,
]
_ANTONINI_G0 = [
    -0.0456358815571251, -0.0287717631142493, 0.2956358815571280,
    0.5575435262285023, 0.2956358815571233, -0.0287717631142531,
    -0.0456358815571261,
]

# Near-symmetric 13/19.  The 19-tap synthesis lowpass is the unique
# symmetric filter making the product halfband with a double zero at pi.
_NSB_H0 = [
    -0.0017578125, 0.0, 0.022265625, -0.046875, -0.0482421875, 0.296875,
    0.55546875, 0.296875, -0.0482421875, -0.046875, 0.022265625, 0.0,
    -0.0017578125,
]
_NSB_G0_HALF = [
    0.5756975446428572, 0.2871416364397321, -0.05279715401785716,
    -0.04192731584821428, 0.01572265625, 0.005530133928571428,
    -0.000774274553571429, -0.0007734898158482144, 0.0,
    2.9035295758928594e-05,
]

# 14-tap quarter-shift lowpass (tree b), orthonormal, DC gain sqrt(2).
_QSHIFT14 = [
    0.0032531427636532, -0.0038832119991585, 0.0346603468448535,
    -0.0388728012688278, -0.1172038876991153, 0.2752953846688820,
    0.7561456438925225, 0.5688104207121227, 0.0118660920337970,
    -0.1067118046866654, 0.0238253847949203, 0.0170252238815540,
    -0.0054394759372741, -0.0045568956284755,
]


def _unfold_symmetric(half):
    half = list(half)
    return np.array(half[:0:-1] + half)


def modulate(taps):
    """Return ``(-1)**(n - c) * taps[n]`` for an odd-length zero-phase filter."""
    taps = np.asarray(taps, dtype=np.float64)
    if len(taps) % 2 != 1:
        raise ValueError("zero-phase modulation needs an odd tap count")
    c = (len(taps) - 1) // 2
    sign = (-1.0) ** (np.arange(len(taps)) - c)
    return taps * sign


@dataclass(frozen=True)
class BiortPair:
    """Level-1 biorthogonal pair: analysis ``h0, h1`` and synthesis ``g0, g1``."""

    name: str
    h0: np.ndarray
    g0: np.ndarray
    h1: np.ndarray = field(init=False)
    g1: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "h0", np.asarray(self.h0, dtype=np.float64))
        object.__setattr__(self, "g0", np.asarray(self.g0, dtype=np.float64))
        object.__setattr__(self, "h1", modulate(self.g0))
        object.__setattr__(self, "g1", modulate(self.h0))


@dataclass(frozen=True)
class QShiftPair:
    """Quarter-shift filters for levels >= 2.

    ``h0a``/``h1a`` filter tree a, ``h0b``/``h1b`` tree b.  Synthesis uses the
    opposite tree's analysis filters (orthonormal bank).
    """

    name: str
    h0b: np.ndarray

    @property
    def h0a(self):
        return self.h0b[::-1].copy()

    @property
    def h1a(self):
        taps = self.h0b.copy()
        first_odd = (len(taps) // 2 + 1) % 2
        taps[first_odd::2] *= -1.0
        return taps

    @property
    def h1b(self):
        return self.h1a[::-1].copy()


BIORT = {
    "antonini": BiortPair("antonini", _ANTONINI_H0, _ANTONINI_G0),
    "legall": BiortPair("legall", [-0.125, 0.25, 0.75, 0.25, -0.125], [0.25, 0.5, 0.25]),
    "near_sym_a": BiortPair(
        "near_sym_a", np.array([-1.0, 5.0, 12.0, 5.0, -1.0]) / 20.0,
        np.array([-3.0, -15.0, 73.0, 170.0, 73.0, -15.0, -3.0]) / 280.0,
    ),
    "near_sym_b": BiortPair("near_sym_b", _NSB_H0, _unfold_symmetric(_NSB_G0_HALF)),
}
QSHIFT = {"qshift14": QShiftPair("qshift14", np.array(_QSHIFT14))}

_ALIASES = {
    "antonini": "antonini",
    "legall": "legall",
    "nearsymmetrica": "near_sym_a",
    "near_sym_a": "near_sym_a",
    "nearsymmetricb": "near_sym_b",
    "near_sym_b": "near_sym_b",
    "qshift14": "qshift14",
}

BIORT_NAMES = tuple(BIORT)
QSHIFT_NAMES = tuple(QSHIFT)


@dataclass(frozen=True)
class FilterBank:
    """A complete DTCWT filter bank: one level-1 pair plus one q-shift pair."""

    biort: BiortPair
    qshift: QShiftPair

    @property
    def name(self):
        return self.biort.name

    @property
    def delays(self):
        """Integer group delays (in samples) of each analysis filter."""
        q = len(self.qshift.h0b)
        return {
            "h0o": (len(self.biort.h0) - 1) // 2,
            "h1o": (len(self.biort.h1) - 1) // 2,
            "h0a": q // 2,
            "h0b": q // 2 - 1,
        }


def _canonical(name):
    key = str(name).lower().replace("-", "").replace(" ", "")
    if key not in _ALIASES:
        raise ValueError(f"unknown filter bank {name!r}")
    return _ALIASES[key]


def get_filter_bank(name="near_sym_a", qshift="qshift14"):
    """Look up a filter bank by name.

    ``name`` selects the level-1 pair (``"qshift14"`` is accepted and maps
    to the default level-1 pair, since that name only concerns levels >= 2).
    """
    if isinstance(name, FilterBank):
        return name
    key = _canonical(name)
    if key in QSHIFT:
        return FilterBank(BIORT["near_sym_a"], QSHIFT[key])
    return FilterBank(BIORT[key], QSHIFT[_canonical(qshift)])
