"""Dense grids, interpolation, image metrics and PPM I/O.

Grids are plain float64 numpy arrays in row-major order; ``(m, n)`` for
planes, ``(d0, d1, d2)`` for volumes and so on.  Continuous sample
coordinates are cell-index coordinates: ``u`` in ``[0, m - 1]`` walks the
rows and ``v`` in ``[0, n - 1]`` the columns.  Out-of-range coordinates are
clamped to the border.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Image",
    "PpmError",
    "bilinear_weights",
    "bilinear_sample",
    "linear_weights",
    "linear_sample",
    "resize_bilinear",
    "psnr",
    "ssim",
    "read_ppm",
    "write_ppm",
]


@dataclass
class Image:
    """Row-major image with values nominally in [0, 1]; ``data`` is ``(h, w, c)``."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim == 2:
            d = d[:, :, None]
        if d.ndim != 3 or d.shape[2] not in (1, 3):
            raise ValueError(f"image must be (h, w, 1|3), got {d.shape}")
        self.data = d

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]

    @classmethod
    def zeros(cls, height, width, channels=3):
        return cls(np.zeros((height, width, channels)))


def _as_array(x):
    return x.data if isinstance(x, Image) else np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------- sampling


def linear_weights(coord, size):
    """Clamped 1D linear interpolation: ``(i0, i1, w1)`` with value ``(1-w1) g[i0] + w1 g[i1]``."""
    c = np.clip(np.asarray(coord, dtype=np.float64), 0.0, size - 1)
    i0 = np.minimum(np.floor(c).astype(np.int64), max(size - 2, 0))
    i1 = np.minimum(i0 + 1, size - 1)
    w1 = c - i0
    return i0, i1, w1


def linear_sample(vec, coord):
    """Linear interpolation along the last axis of ``vec`` at index ``coord``."""
    vec = np.asarray(vec)
    i0, i1, w1 = linear_weights(coord, vec.shape[-1])
    return vec[..., i0] * (1.0 - w1) + vec[..., i1] * w1


def bilinear_weights(u, v, shape):
    """Corner indices and weights for clamped bilinear sampling.

    Returns ``(rows, cols, weights)``, each shaped ``coords.shape + (4,)``.
    Corner order is (r0,c0), (r0,c1), (r1,c0), (r1,c1).
    """
    m, n = shape
    r0, r1, wu = linear_weights(u, m)
    c0, c1, wv = linear_weights(v, n)
    rows = np.stack([r0, r0, r1, r1], axis=-1)
    cols = np.stack([c0, c1, c0, c1], axis=-1)
    w = np.stack([(1 - wu) * (1 - wv), (1 - wu) * wv, wu * (1 - wv), wu * wv], axis=-1)
    return rows, cols, w


def bilinear_sample(grid, u, v):
    """Sample ``grid[..., m, n]`` at continuous index coordinates ``(u, v)``.

    Exact at integer coordinates; coordinates outside ``[0, m-1] x [0, n-1]``
    clamp to the border.  Scalar inputs give a scalar (or batch) result.
    """
    g = np.asarray(grid, dtype=np.float64)
    rows, cols, w = bilinear_weights(u, v, g.shape[-2:])
    return (g[..., rows, cols] * w).sum(axis=-1)


def resize_bilinear(plane, new_shape):
    """Align-corners bilinear resize of the last two axes."""
    p = np.asarray(plane, dtype=np.float64)
    m, n = p.shape[-2:]
    nm, nn = new_shape
    u = np.linspace(0.0, m - 1, nm) if nm > 1 else np.zeros(1)
    v = np.linspace(0.0, n - 1, nn) if nn > 1 else np.zeros(1)
    r0, r1, wu = linear_weights(u, m)
    c0, c1, wv = linear_weights(v, n)
    rows = p[..., r0, :] * (1 - wu)[:, None] + p[..., r1, :] * wu[:, None]
    return rows[..., c0] * (1 - wv) + rows[..., c1] * wv


# ----------------------------------------------------------------- metrics


def psnr(a, b, peak=1.0):
    """Peak signal-to-noise ratio in dB; ``inf`` when the inputs are equal."""
    x, y = _as_array(a), _as_array(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def _gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    k = len(g)
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def ssim(a, b, data_range=1.0, window=11, sigma=1.5):
    """Mean structural similarity with an 11-tap Gaussian window.

    Only fully-contained windows are used.  Images smaller than the window
    shrink it to the largest odd size that fits.  Colour images are scored
    per channel and averaged.
    """
    x, y = _as_array(a), _as_array(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x, y = x[:, :, None], y[:, :, None]
    size = min(window, x.shape[0], x.shape[1])
    size -= 1 - size % 2
    g = _gaussian_window(size, sigma)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    scores = []
    for ch in range(x.shape[2]):
        p, q = x[:, :, ch], y[:, :, ch]
        mu_p, mu_q = _filter_valid(p, g), _filter_valid(q, g)
        spp = _filter_valid(p * p, g) - mu_p * mu_p
        sqq = _filter_valid(q * q, g) - mu_q * mu_q
        spq = _filter_valid(p * q, g) - mu_p * mu_q
        num = (2 * mu_p * mu_q + c1) * (2 * spq + c2)
        den = (mu_p ** 2 + mu_q ** 2 + c1) * (spp + sqq + c2)
        scores.append(float(np.mean(num / den)))
    return float(np.mean(scores))


# --------------------------------------------------------------------- PPM


class PpmError(ValueError):
    """Malformed or truncated PPM/PGM data; ``offset`` is the failing byte."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _header_tokens(buf, count, pos):
    tokens = []
    while len(tokens) < count:
        while pos < len(buf) and (buf[pos:pos + 1].isspace() or buf[pos:pos + 1] == b"#"):
            if buf[pos:pos + 1] == b"#":
                end = buf.find(b"\n", pos)
                pos = len(buf) if end < 0 else end + 1
            else:
                pos += 1
        if pos >= len(buf):
            raise PpmError("unexpected end of header", pos)
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        tokens.append((buf[start:pos], start))
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise PpmError("missing whitespace after header", pos)
    return tokens, pos + 1


def decode_ppm(buf):
    """Parse P5/P6 bytes into an :class:`Image`."""
    buf = bytes(buf)
    if buf[:2] not in (b"P5", b"P6"):
        raise PpmError(f"bad magic {buf[:2]!r}", 0)
    channels = 3 if buf[:2] == b"P6" else 1
    tokens, start = _header_tokens(buf, 3, 2)
    values = []
    for tok, off in tokens:
        if not tok.isdigit():
            raise PpmError(f"expected integer, got {tok!r}", off)
        values.append(int(tok))
    width, height, maxval = values
    if width < 1 or height < 1:
        raise PpmError("image dimensions must be positive", tokens[0][1])
    if maxval != 255:
        raise PpmError(f"only maxval 255 is supported, got {maxval}", tokens[2][1])
    need = width * height * channels
    if len(buf) - start < need:
        raise PpmError(f"truncated payload: expected {need} bytes, found {len(buf) - start}", len(buf))
    raw = np.frombuffer(buf, dtype=np.uint8, count=need, offset=start)
    return Image(raw.reshape(height, width, channels).astype(np.float64) / 255.0)


def encode_ppm(img):
    img = img if isinstance(img, Image) else Image(img)
    q = np.round(np.clip(img.data, 0.0, 1.0) * 255.0).astype(np.uint8)
    magic = b"P6" if img.channels == 3 else b"P5"
    return magic + f"\n{img.width} {img.height}\n255\n".encode() + q.tobytes()


def read_ppm(path):
    with open(path, "rb") as fh:
        return decode_ppm(fh.read())


def write_ppm(path, img):
    with open(path, "wb") as fh:
        fh.write(encode_ppm(img))
