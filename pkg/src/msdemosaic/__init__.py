"""Multispectral filter array demosaicing toolkit.

Forward mosaicing operator, classical and variational baselines, a small
trainable reconstructor with self-supervised perspective-equivariant losses,
a full metric suite, and a CLI for reproducible end-to-end experiments.
"""

from .core import Mosaic, Rng, ShapeError, SpectralCube, ValidityMask
from .msfa import MosaicOperator, MsfaPattern, build_sequential_pattern

__version__ = "0.1.0"

__all__ = [
    "Mosaic",
    "MosaicOperator",
    "MsfaPattern",
    "Rng",
    "ShapeError",
    "SpectralCube",
    "ValidityMask",
    "build_sequential_pattern",
    "__version__",
]
