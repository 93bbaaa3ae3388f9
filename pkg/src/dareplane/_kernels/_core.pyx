# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``fallback.py`` (same signatures)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, floor

cnp.import_array()

NAME = "cython"


cdef inline void _axis(double coord, Py_ssize_t size, Py_ssize_t* i0, Py_ssize_t* i1, double* w1) noexcept nogil:
    cdef double c = coord
    cdef Py_ssize_t lo
    if c < 0.0:
        c = 0.0
    elif c > size - 1:
        c = size - 1
    lo = <Py_ssize_t>floor(c)
    if lo > size - 2:
        lo = size - 2
    if lo < 0:
        lo = 0
    i0[0] = lo
    i1[0] = lo + 1 if lo + 1 < size else size - 1
    w1[0] = c - lo


def plane_gather(const double[:, :, ::1] planes, const double[::1] u, const double[::1] v):
    cdef Py_ssize_t R = planes.shape[0], m = planes.shape[1], n = planes.shape[2]
    cdef Py_ssize_t P = u.shape[0]
    out_arr = np.empty((R, P))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t p, r, r0, r1, c0, c1
    cdef double wu, wv, a, b, c, d
    with nogil:
        for p in range(P):
            _axis(u[p], m, &r0, &r1, &wu)
            _axis(v[p], n, &c0, &c1, &wv)
            a = (1.0 - wu) * (1.0 - wv)
            b = (1.0 - wu) * wv
            c = wu * (1.0 - wv)
            d = wu * wv
            for r in range(R):
                out[r, p] = (planes[r, r0, c0] * a + planes[r, r0, c1] * b
                             + planes[r, r1, c0] * c + planes[r, r1, c1] * d)
    return out_arr


def plane_scatter(const double[:, ::1] grad, const double[::1] u, const double[::1] v, Py_ssize_t m, Py_ssize_t n):
    cdef Py_ssize_t R = grad.shape[0], P = grad.shape[1]
    out_arr = np.zeros((R, m, n))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t p, r, r0, r1, c0, c1
    cdef double wu, wv, a, b, c, d, g
    with nogil:
        for p in range(P):
            _axis(u[p], m, &r0, &r1, &wu)
            _axis(v[p], n, &c0, &c1, &wv)
            a = (1.0 - wu) * (1.0 - wv)
            b = (1.0 - wu) * wv
            c = wu * (1.0 - wv)
            d = wu * wv
            for r in range(R):
                g = grad[r, p]
                out[r, r0, c0] += g * a
                out[r, r0, c1] += g * b
                out[r, r1, c0] += g * c
                out[r, r1, c1] += g * d
    return out_arr


def composite_forward(const double[:, ::1] sigma, const double[:, :, ::1] rgb, const double[:, ::1] delta,
                      const double[:, ::1] tvals, const double[::1] bg):
    cdef Py_ssize_t B = sigma.shape[0], K = sigma.shape[1]
    color_arr = np.empty((B, 3))
    acc_arr = np.empty(B)
    depth_arr = np.empty(B)
    w_arr = np.empty((B, K))
    t_arr = np.empty((B, K + 1))
    cdef double[:, ::1] color = color_arr
    cdef double[::1] acc = acc_arr
    cdef double[::1] depth = depth_arr
    cdef double[:, ::1] w = w_arr
    cdef double[:, ::1] trans = t_arr
    cdef Py_ssize_t b, k
    cdef double tau, t, tn, wk, a, dn, c0, c1, c2
    with nogil:
        for b in range(B):
            tau = 0.0
            trans[b, 0] = 1.0
            a = 0.0
            dn = 0.0
            c0 = 0.0
            c1 = 0.0
            c2 = 0.0
            t = 1.0
            for k in range(K):
                tau = tau + sigma[b, k] * delta[b, k]
                tn = exp(-tau)
                trans[b, k + 1] = tn
                wk = t - tn
                w[b, k] = wk
                a += wk
                dn += wk * tvals[b, k]
                c0 += wk * rgb[b, k, 0]
                c1 += wk * rgb[b, k, 1]
                c2 += wk * rgb[b, k, 2]
                t = tn
            acc[b] = a
            color[b, 0] = c0 + t * bg[0]
            color[b, 1] = c1 + t * bg[1]
            color[b, 2] = c2 + t * bg[2]
            depth[b] = dn / (a if a > 1e-10 else 1e-10)
    return color_arr, acc_arr, depth_arr, w_arr, t_arr


def composite_backward(const double[:, ::1] sigma, const double[:, :, ::1] rgb, const double[:, ::1] delta,
                       const double[:, ::1] tvals, const double[::1] bg, const double[:, ::1] weights,
                       const double[:, ::1] trans, const double[:, ::1] g_color, const double[::1] g_acc,
                       const double[::1] g_depth):
    cdef Py_ssize_t B = sigma.shape[0], K = sigma.shape[1]
    gs_arr = np.empty((B, K))
    gr_arr = np.empty((B, K, 3))
    cdef double[:, ::1] gs = gs_arr
    cdef double[:, :, ::1] gr = gr_arr
    cdef Py_ssize_t b, k
    cdef double a, denom, dnum, gacc_d, gdep, bgt, after, val, tfin
    with nogil:
        for b in range(B):
            a = 0.0
            dnum = 0.0
            for k in range(K):
                a += weights[b, k]
                dnum += weights[b, k] * tvals[b, k]
            denom = a if a > 1e-10 else 1e-10
            # the depth of an empty ray is held constant
            gacc_d = -g_depth[b] * dnum / (denom * denom) if a > 1e-10 else 0.0
            gdep = g_depth[b] / denom if a > 1e-10 else 0.0
            bgt = g_color[b, 0] * bg[0] + g_color[b, 1] * bg[1] + g_color[b, 2] * bg[2]
            tfin = trans[b, K]
            after = 0.0
            for k in range(K - 1, -1, -1):
                val = (g_color[b, 0] * rgb[b, k, 0] + g_color[b, 1] * rgb[b, k, 1]
                       + g_color[b, 2] * rgb[b, k, 2] + g_acc[b]
                       + gdep * tvals[b, k] + gacc_d)
                gs[b, k] = delta[b, k] * (trans[b, k + 1] * val - after - tfin * bgt)
                after += weights[b, k] * val
                gr[b, k, 0] = weights[b, k] * g_color[b, 0]
                gr[b, k, 1] = weights[b, k] * g_color[b, 1]
                gr[b, k, 2] = weights[b, k] * g_color[b, 2]
    return gs_arr, gr_arr


def rle_encode(bits_in):
    cdef const unsigned char[::1] bits = np.ascontiguousarray(bits_in, dtype=np.uint8)
    cdef Py_ssize_t n = bits.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.uint8)
    # worst case: every entry its own run plus a leading zero run
    out_arr = np.empty(2 * n + 2, dtype=np.uint8)
    cdef unsigned char[::1] out = out_arr
    cdef Py_ssize_t i = 0, pos = 0, run
    cdef unsigned char cur = 0
    with nogil:
        while i < n or pos == 0:
            run = 0
            while i < n and bits[i] == cur:
                run += 1
                i += 1
            while run > 255:
                out[pos] = 255
                out[pos + 1] = 0
                pos += 2
                run -= 255
            out[pos] = <unsigned char>run
            pos += 1
            cur = 1 - cur
    return out_arr[:pos].copy()


def rle_decode(runs_in, Py_ssize_t size):
    cdef const unsigned char[::1] runs = np.ascontiguousarray(runs_in, dtype=np.uint8)
    cdef Py_ssize_t total = 0, j, i, pos = 0
    for j in range(runs.shape[0]):
        total += runs[j]
    if total != size:
        raise ValueError(f"run lengths cover {total} entries, expected {size}")
    out_arr = np.empty(size, dtype=np.uint8)
    cdef unsigned char[::1] out = out_arr
    with nogil:
        for j in range(runs.shape[0]):
            for i in range(runs[j]):
                out[pos] = j & 1
                pos += 1
    return out_arr


def huffman_encode(symbols_in, codes_in, lengths_in):
    cdef const unsigned char[::1] symbols = np.ascontiguousarray(symbols_in, dtype=np.uint8)
    cdef const unsigned long long[::1] codes = np.ascontiguousarray(codes_in, dtype=np.uint64)
    cdef const long long[::1] lengths = np.ascontiguousarray(lengths_in, dtype=np.int64)
    cdef Py_ssize_t n = symbols.shape[0], i, total = 0
    cdef long long l
    for i in range(n):
        l = lengths[symbols[i]]
        if l == 0:
            raise ValueError("symbol without a code")
        total += l
    if total == 0:
        return b"", 0
    out_arr = np.zeros((total + 7) // 8, dtype=np.uint8)
    cdef unsigned char[::1] out = out_arr
    cdef Py_ssize_t pos = 0
    cdef unsigned long long code
    cdef long long j
    with nogil:
        for i in range(n):
            code = codes[symbols[i]]
            l = lengths[symbols[i]]
            for j in range(l - 1, -1, -1):
                if (code >> j) & 1:
                    out[pos >> 3] |= <unsigned char>(0x80 >> (pos & 7))
                pos += 1
    return out_arr.tobytes(), total


def huffman_decode(payload, Py_ssize_t nbits, Py_ssize_t count, first_code_in, first_index_in, counts_in, order_in):
    cdef const unsigned char[::1] data = np.frombuffer(payload, dtype=np.uint8) if len(payload) else np.zeros(1, dtype=np.uint8)
    cdef const long long[::1] first_code = np.ascontiguousarray(first_code_in, dtype=np.int64)
    cdef const long long[::1] first_index = np.ascontiguousarray(first_index_in, dtype=np.int64)
    cdef const long long[::1] counts = np.ascontiguousarray(counts_in, dtype=np.int64)
    cdef const long long[::1] order = np.ascontiguousarray(order_in, dtype=np.int64)
    cdef Py_ssize_t maxlen = counts.shape[0] - 1
    out_arr = np.empty(count, dtype=np.uint8)
    cdef unsigned char[::1] out = out_arr
    cdef Py_ssize_t i, pos = 0, length
    cdef long long code, off
    cdef int err = 0
    with nogil:
        for i in range(count):
            code = 0
            length = 0
            while True:
                if pos >= nbits:
                    err = 1
                    break
                code = (code << 1) | ((data[pos >> 3] >> (7 - (pos & 7))) & 1)
                pos += 1
                length += 1
                if length > maxlen:
                    err = 2
                    break
                off = code - first_code[length]
                if off >= 0 and off < counts[length]:
                    out[i] = <unsigned char>order[first_index[length] + off]
                    break
            if err:
                break
    if err == 1:
        raise ValueError("bit stream exhausted")
    if err == 2:
        raise ValueError("invalid code in bit stream")
    return out_arr, pos
