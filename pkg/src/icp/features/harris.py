"""Harris corner detector over the smoothed structure tensor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import ImageTooSmall, WrongColorMode
from ..pimage import ColorMode, PixelMatrix
from .types import Keypoint

MIN_DIM = 8


@dataclass(frozen=True)
class HarrisParams:
    k: float = 0.04
    sigma: float = 1.0
    response_threshold: float = 0.01   # fraction of the max positive response
    nms_radius: int = 3


def harris_response(grey: np.ndarray, k: float, sigma: float) -> np.ndarray:
    """R = det(S) - k * trace(S)^2 over the Gaussian-smoothed tensor."""
    img = grey.astype(np.float64)
    ix = ndimage.sobel(img, axis=1, mode="reflect")
    iy = ndimage.sobel(img, axis=0, mode="reflect")
    sxx = ndimage.gaussian_filter(ix * ix, sigma, mode="reflect")
    syy = ndimage.gaussian_filter(iy * iy, sigma, mode="reflect")
    sxy = ndimage.gaussian_filter(ix * iy, sigma, mode="reflect")
    det = sxx * syy - sxy * sxy
    tr = sxx + syy
    return det - k * (tr * tr)


def harris(matrix: PixelMatrix, params: HarrisParams | None = None) -> list[Keypoint]:
    """Corners as local response maxima above a relative threshold.

    Keypoints come back sorted by descending response (ties broken by row
    then column), orientation 0 and scale equal to the smoothing sigma.
    """
    if matrix.mode is not ColorMode.GREY:
        raise WrongColorMode("harris requires a grey image")
    if min(matrix.width, matrix.height) < MIN_DIM:
        raise ImageTooSmall(
            f"{matrix.width}x{matrix.height} below minimum {MIN_DIM}x{MIN_DIM}"
        )
    params = params or HarrisParams()
    resp = harris_response(matrix.pixels, params.k, params.sigma)
    max_resp = float(resp.max(initial=0.0))
    if max_resp <= 0.0:
        return []
    threshold = params.response_threshold * max_resp
    size = 2 * params.nms_radius + 1
    local_max = resp == ndimage.maximum_filter(resp, size=size, mode="constant", cval=-np.inf)
    rows, cols = np.nonzero(local_max & (resp > threshold))
    if rows.size == 0:
        return []
    values = resp[rows, cols]
    order = np.lexsort((cols, rows, -values))

    # plateau ties survive the maximum filter; a greedy pass keeps the first
    # of any pair closer than the suppression radius
    kept_r: list[int] = []
    kept_c: list[int] = []
    kept_v: list[float] = []
    r2 = params.nms_radius * params.nms_radius
    for idx in order:
        r, c, v = int(rows[idx]), int(cols[idx]), float(values[idx])
        if any((r - kr) ** 2 + (c - kc) ** 2 <= r2 for kr, kc in zip(kept_r, kept_c)):
            continue
        kept_r.append(r)
        kept_c.append(c)
        kept_v.append(v)
    return [
        Keypoint(x=float(c), y=float(r), scale=params.sigma, orientation=0.0, response=v)
        for r, c, v in zip(kept_r, kept_c, kept_v)
    ]
