"""One-dimensional filtering operators as cached dense matrices.

Every operator used by the transforms is linear and separable, so each is
materialised once per (filter, length) as a small matrix.  Filtering along
an axis is then a matrix product, and adjoints are plain transposes.

Boundaries use half-sample symmetric extension of the *interleaved* signal.
For the quarter-shift levels this is what makes one tree's extension come
from the time-reversed samples of the other tree.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

__all__ = [
    "reflect_index",
    "odd_filter_matrix",
    "qshift_analysis_matrices",
    "qshift_synthesis_matrices",
]


def reflect_index(idx, n):
    """Map (possibly out-of-range) indices onto ``[0, n)`` by half-sample reflection."""
    k = np.mod(idx, 2 * n)
    return np.where(k >= n, 2 * n - 1 - k, k)


def _freeze(m):
    m.setflags(write=False)
    return m


@lru_cache(maxsize=256)
def _odd_filter_matrix(taps, n):
    h = np.asarray(taps)
    c = (len(h) - 1) // 2
    m = np.zeros((n, n))
    rows = np.arange(n)
    for k, hk in enumerate(h):
        np.add.at(m, (rows, reflect_index(rows + c - k, n)), hk)
    return _freeze(m)


def odd_filter_matrix(taps, n):
    """Same-length filtering by a centred odd-length filter (level 1)."""
    if len(taps) % 2 != 1:
        raise ValueError("level-1 filters must have odd length")
    return _odd_filter_matrix(tuple(float(t) for t in taps), int(n))


def _tree_position(tree, j):
    # tree a occupies even samples of the interleaved signal, tree b odd ones
    return 2 * j + (1 if tree == "b" else 0)


def _decimate_tree(m, taps, tree, length):
    """Rows of ``m`` receive one tree filtered by ``taps`` then decimated by 2."""
    h = np.asarray(taps)
    nt = length // 2
    pre = (len(h) - 1) // 2
    span = len(h) - 1
    out_rows = np.arange(nt // 2)
    out_pos = 2 * out_rows  # index into the undecimated filtered tree
    row_offset = 0 if tree == "a" else 1
    for k, hk in enumerate(h):
        tree_idx = out_pos + span - k - pre
        src = reflect_index(_tree_position(tree, tree_idx), length)
        np.add.at(m, (2 * out_rows + row_offset, src), hk)


def _pair_swap(n):
    idx = np.arange(n)
    return idx ^ 1


@lru_cache(maxsize=128)
def _qshift_analysis(h0a, h0b, h1a, h1b, length):
    half = length // 2
    lo = np.zeros((half, length))
    hi = np.zeros((half, length))
    _decimate_tree(lo, h0a, "a", length)
    _decimate_tree(lo, h0b, "b", length)
    _decimate_tree(hi, h1a, "a", length)
    _decimate_tree(hi, h1b, "b", length)
    # highpass trees leave in swapped order so that oriented subbands keep the
    # same angle labels at every level
    return _freeze(lo), _freeze(hi[_pair_swap(half)])


def qshift_analysis_matrices(qshift, length):
    """Lowpass/highpass decimating operators, interleaved length -> length/2."""
    if length % 4 != 0:
        raise ValueError(f"q-shift levels need a length divisible by 4, got {length}")
    key = tuple(tuple(float(t) for t in f) for f in (qshift.h0a, qshift.h0b, qshift.h1a, qshift.h1b))
    return _qshift_analysis(*key, int(length))


def _expand_tree(m, taps, tree, out_length):
    """Columns of ``m`` (coarse interleaved signal) upsampled into one output tree."""
    h = np.asarray(taps)
    coarse = out_length // 2  # interleaved coarse length
    nt = coarse // 2  # samples per coarse tree
    pre = (len(h) - 1) // 2
    post = len(h) - 1 - pre
    lead = (pre + 1) // 2
    width = 2 * nt + pre + post
    start = (pre + 1) % 2
    offset = 0 if tree == "a" else 1
    for e in range(nt + lead + post // 2):
        pos = start + 2 * e
        if pos >= width:
            continue
        src_tree_idx = e - lead
        src = reflect_index(_tree_position(tree, src_tree_idx), coarse)
        out = np.arange(2 * nt)
        k = out + (len(h) - 1) - pos
        ok = (k >= 0) & (k < len(h))
        np.add.at(m, (2 * out[ok] + offset, np.full(ok.sum(), src)), h[k[ok]])


@lru_cache(maxsize=128)
def _qshift_synthesis(h0a, h0b, h1a, h1b, length):
    half = length // 2
    lo = np.zeros((length, half))
    hi = np.zeros((length, half))
    # synthesis for one tree uses the opposite tree's analysis filters
    _expand_tree(lo, h0b, "a", length)
    _expand_tree(lo, h0a, "b", length)
    _expand_tree(hi, h1b, "a", length)
    _expand_tree(hi, h1a, "b", length)
    return _freeze(lo), _freeze(hi[:, _pair_swap(half)])


def qshift_synthesis_matrices(qshift, length):
    """Interpolating operators mapping interleaved length/2 -> length."""
    if length % 4 != 0:
        raise ValueError(f"q-shift levels need a length divisible by 4, got {length}")
    key = tuple(tuple(float(t) for t in f) for f in (qshift.h0a, qshift.h0b, qshift.h1a, qshift.h1b))
    return _qshift_synthesis(*key, int(length))
