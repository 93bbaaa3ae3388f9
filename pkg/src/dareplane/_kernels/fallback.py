"""Pure numpy implementations of the hot kernels.

These define the reference semantics; the compiled core in ``_core`` must
agree with them (exactly for the integer codecs, to rounding for the float
kernels).
"""

from __future__ import annotations

import numpy as np

NAME = "python"


# ------------------------------------------------------- plane gather/scatter


def _axis_weights(coord, size):
    c = np.clip(np.asarray(coord, dtype=np.float64), 0.0, size - 1)
    i0 = np.minimum(np.floor(c).astype(np.int64), max(size - 2, 0))
    i1 = np.minimum(i0 + 1, size - 1)
    return i0, i1, c - i0


def plane_gather(planes, u, v):
    """Clamped bilinear samples of ``planes`` ``(R, m, n)`` at ``(u, v)`` -> ``(R, P)``."""
    R, m, n = planes.shape
    r0, r1, wu = _axis_weights(u, m)
    c0, c1, wv = _axis_weights(v, n)
    flat = planes.reshape(R, m * n)
    out = flat[:, r0 * n + c0] * ((1.0 - wu) * (1.0 - wv))
    out += flat[:, r0 * n + c1] * ((1.0 - wu) * wv)
    out += flat[:, r1 * n + c0] * (wu * (1.0 - wv))
    out += flat[:, r1 * n + c1] * (wu * wv)
    return out


def plane_scatter(grad, u, v, m, n):
    """Adjoint of :func:`plane_gather`: accumulate ``grad`` ``(R, P)`` onto ``(R, m, n)``."""
    R, P = grad.shape
    r0, r1, wu = _axis_weights(u, m)
    c0, c1, wv = _axis_weights(v, n)
    idx = np.stack([r0 * n + c0, r0 * n + c1, r1 * n + c0, r1 * n + c1], axis=-1)  # (P, 4)
    w = np.stack([(1.0 - wu) * (1.0 - wv), (1.0 - wu) * wv, wu * (1.0 - wv), wu * wv], axis=-1)
    out = np.empty((R, m * n))
    flat_idx = idx.ravel()
    for r in range(R):
        out[r] = np.bincount(flat_idx, weights=(grad[r][:, None] * w).ravel(), minlength=m * n)
    return out.reshape(R, m, n)


# ---------------------------------------------------------------- compositing


def composite_forward(sigma, rgb, delta, tvals, bg):
    """Emission-absorption compositing of ``B`` rays with ``K`` samples each.

    Returns ``(color (B,3), acc (B,), depth (B,), weights (B,K), trans (B,K+1))``
    where ``trans[:, k]`` is the transmittance before sample ``k``.
    """
    tau = sigma * delta
    B, K = sigma.shape
    trans = np.empty((B, K + 1))
    trans[:, 0] = 1.0
    trans[:, 1:] = np.exp(-np.cumsum(tau, axis=1))
    weights = trans[:, :-1] - trans[:, 1:]
    acc = weights.sum(axis=1)
    color = np.einsum("bk,bkc->bc", weights, rgb) + trans[:, -1:] * bg[None, :]
    depth = (weights * tvals).sum(axis=1) / np.maximum(acc, 1e-10)
    return color, acc, depth, weights, trans


def _suffix_after(x):
    # s[:, k] = sum_{j > k} x[:, j]
    c = np.cumsum(x[:, ::-1], axis=1)[:, ::-1]
    out = np.zeros_like(x)
    out[:, :-1] = c[:, 1:]
    return out


def composite_backward(sigma, rgb, delta, tvals, bg, weights, trans, g_color, g_acc, g_depth):
    """Gradients of a scalar loss w.r.t. ``sigma`` and ``rgb`` given output gradients."""
    acc = weights.sum(axis=1)
    denom = np.maximum(acc, 1e-10)
    depth_num = (weights * tvals).sum(axis=1)
    # per-sample "value" whose weighted sum the loss sees
    val = np.einsum("bc,bkc->bk", g_color, rgb)
    val += g_acc[:, None]
    live = acc > 1e-10
    # the depth of an empty ray is held constant
    val += np.where(live, g_depth / denom, 0.0)[:, None] * tvals
    # depth also depends on acc through the normaliser
    gacc_from_depth = np.where(live, -g_depth * depth_num / (denom * denom), 0.0)
    val += gacc_from_depth[:, None]
    bg_term = (g_color @ bg)  # loss sensitivity to the final transmittance
    after = _suffix_after(weights * val)
    t_next = trans[:, 1:]
    g_sigma = delta * (t_next * val - after - trans[:, -1:] * bg_term[:, None])
    g_rgb = weights[:, :, None] * g_color[:, None, :]
    return g_sigma, g_rgb


# ----------------------------------------------------------------------- RLE


def rle_encode(bits):
    """Alternating run lengths (starting with zeros) of a 0/1 ``uint8`` array.

    Runs longer than 255 are split as ``255, 0, rest`` so every run fits in
    one byte.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size == 0:
        return np.zeros(0, dtype=np.uint8)
    change = np.flatnonzero(np.diff(bits)) + 1
    bounds = np.concatenate([[0], change, [bits.size]])
    runs = np.diff(bounds)
    if bits[0] == 1:
        runs = np.concatenate([[0], runs])
    out = []
    for r in runs.tolist():
        while r > 255:
            out.extend((255, 0))
            r -= 255
        out.append(r)
    return np.asarray(out, dtype=np.uint8)


def rle_decode(runs, size):
    """Inverse of :func:`rle_encode`; raises ``ValueError`` on a length mismatch."""
    runs = np.asarray(runs, dtype=np.int64)
    values = np.arange(runs.size) % 2
    total = int(runs.sum())
    if total != size:
        raise ValueError(f"run lengths cover {total} entries, expected {size}")
    return np.repeat(values, runs).astype(np.uint8)


# ------------------------------------------------------------------- Huffman


def huffman_encode(symbols, codes, lengths):
    """Pack ``symbols`` (uint8) MSB-first using per-symbol ``codes``/``lengths``.

    Returns ``(payload bytes, bit count)``.
    """
    symbols = np.asarray(symbols, dtype=np.int64)
    codes = np.asarray(codes, dtype=np.uint64)
    lengths = np.asarray(lengths, dtype=np.int64)
    ls = lengths[symbols]
    if np.any(ls == 0):
        raise ValueError("symbol without a code")
    total = int(ls.sum())
    if total == 0:
        return b"", 0
    owner = np.repeat(np.arange(symbols.size), ls)
    starts = np.cumsum(ls) - ls
    j = np.arange(total) - starts[owner]
    shift = (ls[owner] - 1 - j).astype(np.uint64)
    bits = ((codes[symbols][owner] >> shift) & np.uint64(1)).astype(np.uint8)
    return np.packbits(bits).tobytes(), total


def huffman_decode(payload, nbits, count, first_code, first_index, counts, order):
    """Decode ``count`` symbols from a canonical-Huffman bit stream.

    ``first_code[l]``, ``first_index[l]`` and ``counts[l]`` describe the
    canonical code of length ``l``; ``order`` lists symbols sorted by
    (length, symbol).  Raises ``ValueError`` on an invalid or short stream.
    """
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))[:nbits].tolist()
    out = np.empty(count, dtype=np.uint8)
    maxlen = len(counts) - 1
    pos = 0
    for i in range(count):
        code = 0
        length = 0
        while True:
            if pos >= nbits:
                raise ValueError("bit stream exhausted")
            code = (code << 1) | bits[pos]
            pos += 1
            length += 1
            if length > maxlen:
                raise ValueError("invalid code in bit stream")
            off = code - first_code[length]
            if 0 <= off < counts[length]:
                out[i] = order[first_index[length] + off]
                break
    return out, pos
