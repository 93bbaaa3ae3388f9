"""Binary coefficient archive: binarised masks as RLE + canonical Huffman.

Layout (all integers little-endian)::

    "DARE"  u8 version  u8 flags  u64 total_length
    geometry block
    Huffman table: 256 x u8 code lengths (run-length alphabet 0..255)
    per coefficient grid, in parameter order:
        u32 run_count  u32 nbits  <huffman bytes>  u32 kept  <values>
    dense block: u16 count, then per array: name, ndim, dims, f32 data
    u32 CRC32 of every preceding byte

Retained coefficient values are stored as raw float32, or with flag bit 0
set as 8-bit codes under a per-grid affine ``[lo, hi]`` range.
"""

from __future__ import annotations

import heapq
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .rep import DaRePlaneField, FieldSpec, _expected_shapes
from .sparsity import MASK_INIT, binarize

__all__ = [
    "MAGIC",
    "VERSION",
    "ArchiveError",
    "BadMagicError",
    "VersionError",
    "TruncatedError",
    "CrcError",
    "HuffmanTableError",
    "ArchiveInfo",
    "huffman_code_lengths",
    "canonical_codes",
    "encode_archive",
    "decode_archive",
    "read_info",
    "mask_stream_bits",
]

MAGIC = b"DARE"
VERSION = 1
MAX_CODE_LEN = 15
FLAG_QUANT8 = 1


class ArchiveError(ValueError):
    code = 1


class BadMagicError(ArchiveError):
    code = 2


class VersionError(ArchiveError):
    code = 3


class TruncatedError(ArchiveError):
    code = 4


class CrcError(ArchiveError):
    code = 5


class HuffmanTableError(ArchiveError):
    code = 6


# ------------------------------------------------------------------ Huffman


def huffman_code_lengths(freqs, limit=MAX_CODE_LEN):
    """Code lengths for a 256-symbol frequency table, capped at ``limit`` bits."""
    freqs = np.asarray(freqs, dtype=np.int64)
    lengths = np.zeros(freqs.size, dtype=np.int64)
    used = np.flatnonzero(freqs)
    if used.size == 0:
        return lengths
    if used.size == 1:
        lengths[used[0]] = 1
        return lengths
    # ties broken by a counter so the result never depends on heap internals
    heap = [(int(freqs[s]), i, [int(s)]) for i, s in enumerate(used)]
    heapq.heapify(heap)
    tick = len(heap)
    while len(heap) > 1:
        fa, _, a = heapq.heappop(heap)
        fb, _, b = heapq.heappop(heap)
        for s in a + b:
            lengths[s] += 1
        heapq.heappush(heap, (fa + fb, tick, a + b))
        tick += 1
    if lengths.max() > limit:
        lengths = _limit_lengths(lengths, freqs, limit)
    return lengths


def _limit_lengths(lengths, freqs, limit):
    # clamp, then lengthen the rarest short codes until Kraft holds again
    lengths = np.minimum(lengths, limit)
    used = np.flatnonzero(lengths)
    kraft = sum(2.0 ** (limit - lengths[s]) for s in used)
    budget = 2 ** limit
    order = sorted(used, key=lambda s: (freqs[s], -s))
    while kraft > budget:
        for s in order:
            if lengths[s] < limit:
                kraft -= 2 ** (limit - lengths[s] - 1)
                lengths[s] += 1
                break
    return lengths


def canonical_codes(lengths):
    """Canonical code words plus the decoder tables for given lengths.

    Returns ``(codes, first_code, first_index, counts, order)``.  Raises
    :class:`HuffmanTableError` when the lengths over-subscribe the code space.
    """
    lengths = np.asarray(lengths, dtype=np.int64)
    maxlen = int(lengths.max()) if lengths.size else 0
    counts = np.bincount(lengths, minlength=maxlen + 1)
    counts[0] = 0
    kraft = sum(int(counts[l]) << (maxlen - l) for l in range(1, maxlen + 1))
    if maxlen and kraft > (1 << maxlen):
        raise HuffmanTableError("code lengths over-subscribe the code space")
    order = np.array(sorted(np.flatnonzero(lengths), key=lambda s: (lengths[s], s)), dtype=np.int64)
    first_code = np.zeros(maxlen + 1, dtype=np.int64)
    first_index = np.zeros(maxlen + 1, dtype=np.int64)
    code = 0
    idx = 0
    for l in range(1, maxlen + 1):
        code = (code + int(counts[l - 1])) << 1
        first_code[l] = code
        first_index[l] = idx
        idx += counts[l]
    codes = np.zeros(lengths.size, dtype=np.uint64)
    for l in range(1, maxlen + 1):
        syms = order[first_index[l]:first_index[l] + counts[l]]
        codes[syms] = first_code[l] + np.arange(syms.size)
    return codes, first_code, first_index, counts, order


# ----------------------------------------------------------------- buffers


class _Reader:
    def __init__(self, buf, end):
        self.buf = buf
        self.pos = 0
        self.end = end

    def take(self, n):
        if self.pos + n > self.end:
            raise TruncatedError(f"archive truncated: needed {self.pos + n} bytes, have {self.end}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _put_str(out, s):
    b = s.encode("ascii")
    out += struct.pack("<B", len(b)) + b


def _get_str(r):
    (n,) = r.unpack("<B")
    return r.take(n).decode("ascii")


# ---------------------------------------------------------------- geometry


_MODES = ("dynamic", "static")
_KINDS = ("dtcwt", "dwt")
ORDER_PAIR_RANK_MAJOR = 0


def _write_geometry(out, spec):
    out += struct.pack("<IIBBB", spec.N, spec.T, _MODES.index(spec.mode), _KINDS.index(spec.basis_kind), spec.level)
    _put_str(out, spec.basis_name)
    out += struct.pack("<3I3I3I", *spec.app_ranks, *spec.den_ranks, spec.app_dim, spec.out_dim, spec.den_dim)
    out += struct.pack("<B", ORDER_PAIR_RANK_MAJOR)


def _read_geometry(r):
    N, T, mode, kind, level = r.unpack("<IIBBB")
    name = _get_str(r)
    v = r.unpack("<3I3I3I")
    (order,) = r.unpack("<B")
    if mode >= len(_MODES) or kind >= len(_KINDS) or order != ORDER_PAIR_RANK_MAJOR:
        raise ArchiveError("unknown geometry enumeration in header")
    return FieldSpec(
        N=N, T=T, app_ranks=v[0:3], den_ranks=v[3:6], app_dim=v[6], out_dim=v[7], den_dim=v[8],
        mode=_MODES[mode], basis_kind=_KINDS[kind], basis_name=name, level=level,
    )


# ------------------------------------------------------------------ encode


@dataclass
class ArchiveInfo:
    spec: FieldSpec
    version: int
    quantized: bool
    total_bytes: int
    mask_bytes: int
    value_bytes: int
    entries: int
    kept: int

    @property
    def sparsity(self):
        return 1.0 - self.kept / self.entries if self.entries else 0.0


def _field_masks(field):
    out = {}
    for k in field.coeff_keys():
        if field.use_masks and k in field.masks:
            out[k] = binarize(field.masks[k]).ravel()
        else:
            out[k] = np.ones(field.params[k].size, dtype=np.uint8)
    return out


def encode_archive(field, quantize_8bit=False, extras=None):
    """Serialise ``field`` (masked coefficients plus dense parameters).

    ``extras`` is an optional ordered mapping of additional named arrays
    (for example network weights) stored as float32 in the dense block.
    """
    spec = field.spec
    bits = _field_masks(field)
    runs = {k: _kernels.rle_encode(b) for k, b in bits.items()}
    freqs = np.zeros(256, dtype=np.int64)
    for rr in runs.values():
        freqs += np.bincount(rr, minlength=256)
    lengths = huffman_code_lengths(freqs)
    codes = canonical_codes(lengths)[0]

    body = bytearray()
    _write_geometry(body, spec)
    body += lengths.astype(np.uint8).tobytes()
    for k in field.coeff_keys():
        payload, nbits = _kernels.huffman_encode(runs[k], codes, lengths)
        body += struct.pack("<II", runs[k].size, nbits) + payload
        kept = field.params[k].ravel()[bits[k].astype(bool)]
        body += struct.pack("<I", kept.size)
        if quantize_8bit:
            lo, hi = (float(kept.min()), float(kept.max())) if kept.size else (0.0, 0.0)
            lo, hi = np.float32(lo), np.float32(hi)
            span = float(hi) - float(lo)
            q = np.zeros(kept.size) if span == 0 else np.round((kept - float(lo)) / span * 255.0)
            body += struct.pack("<ff", lo, hi) + np.clip(q, 0, 255).astype(np.uint8).tobytes()
        else:
            body += kept.astype("<f4").tobytes()
    dense = [(k, v) for k, v in field.params.items() if ".g" not in k]
    dense += list((extras or {}).items())
    body += struct.pack("<H", len(dense))
    for name, arr in dense:
        arr = np.asarray(arr)
        _put_str(body, name)
        body += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += arr.astype("<f4").tobytes()

    head = MAGIC + struct.pack("<BB", VERSION, FLAG_QUANT8 if quantize_8bit else 0)
    total = len(head) + 8 + len(body) + 4
    blob = head + struct.pack("<Q", total) + bytes(body)
    return blob + struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)


# ------------------------------------------------------------------ decode


def _check_envelope(data):
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError("not a coefficient archive (bad magic)")
    if len(data) < 18:
        raise TruncatedError(f"archive truncated: expected at least 18 bytes, got {len(data)}")
    (total,) = struct.unpack("<Q", data[6:14])
    if len(data) < total:
        raise TruncatedError(f"archive truncated: expected {total} bytes, got {len(data)}")
    if len(data) > total:
        raise CrcError(f"archive length mismatch: header says {total} bytes, got {len(data)}")
    # integrity before version, so a damaged version byte reads as corruption
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != crc:
        raise CrcError("CRC mismatch: archive is corrupted")
    if data[4] != VERSION:
        raise VersionError(f"unsupported archive version {data[4]} (expected {VERSION})")
    return data[5] & FLAG_QUANT8 != 0


def decode_archive(data, with_info=False):
    """Inverse of :func:`encode_archive`.

    Returns ``(field, masks, extras)``: masked-out coefficients are zero,
    ``masks`` holds the binarised 0/1 grids, and the field's mask logits are
    set to ``+-MASK_INIT`` accordingly.
    """
    data = bytes(data)
    quant = _check_envelope(data)
    r = _Reader(data, len(data) - 4)
    r.pos = 14
    spec = _read_geometry(r)
    lengths = np.frombuffer(r.take(256), dtype=np.uint8).astype(np.int64)
    if lengths.max() > MAX_CODE_LEN:
        raise HuffmanTableError("code length exceeds the format limit")
    _, first_code, first_index, counts, order = canonical_codes(lengths)
    shapes = _expected_shapes(spec)
    params, masks, bin_masks = {}, {}, {}
    mask_bytes = value_bytes = entries = kept_total = 0
    for k, shape in shapes.items():
        if ".g" not in k:
            continue
        size = int(np.prod(shape))
        n_runs, nbits = r.unpack("<II")
        payload = r.take((nbits + 7) // 8)
        mask_bytes += 8 + len(payload)
        if n_runs and not counts.any():
            raise HuffmanTableError("empty code table for a non-empty run stream")
        try:
            run_syms, used = _kernels.huffman_decode(payload, nbits, n_runs, first_code, first_index, counts, order)
            bits = _kernels.rle_decode(run_syms, size)
        except ValueError as exc:
            raise HuffmanTableError(f"grid {k}: {exc}") from None
        (kept,) = r.unpack("<I")
        if kept != int(bits.sum()):
            raise ArchiveError(f"grid {k}: {kept} stored values for {int(bits.sum())} retained entries")
        start = r.pos
        if quant:
            lo, hi = r.unpack("<ff")
            q = np.frombuffer(r.take(kept), dtype=np.uint8).astype(np.float64)
            vals = float(lo) + q * ((float(hi) - float(lo)) / 255.0)
        else:
            vals = np.frombuffer(r.take(4 * kept), dtype="<f4").astype(np.float64)
        value_bytes += r.pos - start + 4
        w = np.zeros(size)
        w[bits.astype(bool)] = vals
        params[k] = w.reshape(shape)
        bin_masks[k] = bits.reshape(shape)
        masks[k] = np.where(bin_masks[k] > 0, MASK_INIT, -MASK_INIT)
        entries += size
        kept_total += kept
    (n_dense,) = r.unpack("<H")
    extras = {}
    for _ in range(n_dense):
        name = _get_str(r)
        (ndim,) = r.unpack("<B")
        dims = r.unpack(f"<{ndim}I") if ndim else ()
        n = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(r.take(4 * n), dtype="<f4").astype(np.float64).reshape(dims)
        if name in shapes:
            if tuple(dims) != shapes[name]:
                raise ArchiveError(f"dense array {name} has shape {dims}, expected {shapes[name]}")
            params[name] = arr
        else:
            extras[name] = arr
    if r.pos != r.end:
        raise ArchiveError(f"{r.end - r.pos} unexpected trailing bytes")
    missing = [k for k in shapes if k not in params]
    if missing:
        raise ArchiveError(f"archive lacks parameters {missing[:3]}")
    field = DaRePlaneField(spec, {k: params[k] for k in shapes}, masks)
    if with_info:
        info = ArchiveInfo(spec, VERSION, quant, len(data), mask_bytes, value_bytes, entries, kept_total)
        return field, bin_masks, extras, info
    return field, bin_masks, extras


def read_info(data):
    return decode_archive(data, with_info=True)[3]


def mask_stream_bits(masks):
    """Bits an archive spends on the given binary masks (table plus code words).

    ``masks`` is a list of 0/1 arrays; each is coded as one grid block.
    """
    runs = [_kernels.rle_encode(np.asarray(m, dtype=np.uint8).ravel()) for m in masks]
    freqs = np.zeros(256, dtype=np.int64)
    for rr in runs:
        freqs += np.bincount(rr, minlength=256)
    lengths = huffman_code_lengths(freqs)
    code_bits = sum(int(lengths[rr].sum()) for rr in runs)
    return 256 * 8 + code_bits
