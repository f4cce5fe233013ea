"""Feature extraction: corner detection, scale-invariant keypoints, matching.

``extract(name, matrix)`` dispatches through EXTRACTORS, the registry used by
the processing engine and the dispatch service. Every extractor maps a grey
PixelMatrix to a list of (Keypoint, descriptor) pairs; descriptors are
float32 arrays (empty for extractors that don't produce them).
"""

from __future__ import annotations

import numpy as np

from ..errors import UnsupportedFormat
from ..pimage import PixelMatrix
from . import _backend
from .harris import HarrisParams, harris
from .matching import match_descriptors
from .sift import SiftParams, sift_extract
from .types import Keypoint

__all__ = [
    "Keypoint",
    "HarrisParams",
    "SiftParams",
    "harris",
    "sift_extract",
    "match_descriptors",
    "extract",
    "EXTRACTORS",
    "kernel_backend",
    "use_kernel_backend",
    "available_kernel_backends",
]

_EMPTY_DESC = np.zeros(0, dtype=np.float32)


def _harris_extract(matrix: PixelMatrix) -> list[tuple[Keypoint, np.ndarray]]:
    return [(kp, _EMPTY_DESC) for kp in harris(matrix)]


def _sift(matrix: PixelMatrix) -> list[tuple[Keypoint, np.ndarray]]:
    return sift_extract(matrix)


EXTRACTORS = {
    "harris": _harris_extract,
    "sift": _sift,
}


def extract(name: str, matrix: PixelMatrix) -> list[tuple[Keypoint, np.ndarray]]:
    try:
        fn = EXTRACTORS[name]
    except KeyError:
        raise UnsupportedFormat(
            f"unknown extractor {name!r}; expected one of {sorted(EXTRACTORS)}"
        ) from None
    return fn(matrix)


def kernel_backend() -> str:
    """Name of the active kernel backend ('compiled' or 'pure')."""
    return _backend.backend_name()


def use_kernel_backend(name: str) -> None:
    _backend.use(name)


def available_kernel_backends() -> tuple[str, ...]:
    return _backend.available()
