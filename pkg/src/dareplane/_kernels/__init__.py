"""Hot kernels: compiled core when available, numpy fallback otherwise.

Set ``DAREPLANE_PURE_PYTHON=1`` to force the fallback.  ``BACKEND`` names the
implementation in use.
"""

import os

from . import fallback

_FUNCS = (
    "plane_gather",
    "plane_scatter",
    "composite_forward",
    "composite_backward",
    "rle_encode",
    "rle_decode",
    "huffman_encode",
    "huffman_decode",
)


def _load():
    if os.environ.get("DAREPLANE_PURE_PYTHON", "") not in ("", "0"):
        return fallback
    try:
        from . import _core
    except ImportError:
        return fallback
    return _core


_impl = _load()
BACKEND = _impl.NAME

plane_gather = _impl.plane_gather
plane_scatter = _impl.plane_scatter
composite_forward = _impl.composite_forward
composite_backward = _impl.composite_backward
rle_encode = _impl.rle_encode
rle_decode = _impl.rle_decode
huffman_encode = _impl.huffman_encode
huffman_decode = _impl.huffman_decode

__all__ = ["BACKEND", "fallback", *_FUNCS]
