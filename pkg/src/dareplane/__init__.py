"""Radiance fields on wavelet-coded planes.

Each learnable plane is stored as dual-tree complex wavelet coefficients,
gated by trainable binary masks, and materialised by the inverse transform
before sampling.  Subpackages and modules:

- ``wavelet``: DTCWT and DWT filter banks, basis wrappers, shift/orientation analysis
- ``grid``: bilinear sampling, image metrics, PPM I/O
- ``rep``: the plane factorisation and its parameters
- ``sparsity`` and ``codec``: masks and the compressed coefficient archive
- ``field``, ``render`` and ``train``: shading, volume rendering and fitting
- ``scenes`` and ``cli``: synthetic scenes and the ``dareplane`` command
"""

from ._kernels import BACKEND
from .rep import DaRePlaneField, FieldSpec
from .render import RadianceModel

__version__ = "0.1.0"

__all__ = ["BACKEND", "DaRePlaneField", "FieldSpec", "RadianceModel", "__version__"]
