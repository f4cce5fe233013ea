"""Scale-invariant keypoints and 128-d descriptors.

Standard pipeline: Gaussian scale-space pyramid, difference-of-Gaussian
extrema, quadratic subpixel refinement, contrast and edge-ratio rejection,
orientation assignment from a 36-bin histogram (secondary peaks >= 80% of
the max spawn duplicate keypoints), and a 4x4x8 trilinearly interpolated
gradient descriptor normalized to unit length with 0.2 clamping.

The per-keypoint accumulation loops run on the active kernel backend
(compiled extension or numpy fallback); everything else is shared, so both
backends see identical pyramids and candidate lists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import ImageTooSmall, WrongColorMode
from ..pimage import ColorMode, PixelMatrix
from . import _backend
from .types import Keypoint

MIN_DIM = 16
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class SiftParams:
    n_octave_layers: int = 3          # scales per octave
    sigma: float = 1.6                # blur of pyramid level 0
    assumed_blur: float = 0.5         # blur assumed present in the input
    double_size: bool = False         # upsample 2x before the first octave
    contrast_threshold: float = 0.03  # on [0,1] intensities, after refinement
    edge_ratio: float = 10.0
    border: int = 5                   # pixels ignored at layer edges
    max_refine_iter: int = 5
    peak_ratio: float = 0.8           # secondary orientation peak acceptance
    n_orientation_bins: int = 36
    max_keypoints: int = 0            # 0 = unlimited; else keep strongest N


def build_gaussian_pyramid(
    img: np.ndarray, params: SiftParams
) -> list[list[np.ndarray]]:
    """List of octaves, each n_octave_layers+3 progressively blurred images."""
    n = params.n_octave_layers
    if params.double_size:
        base = ndimage.zoom(img, 2.0, order=1, mode="nearest", grid_mode=True)
        first_delta = math.sqrt(max(params.sigma**2 - (2.0 * params.assumed_blur) ** 2, 0.01))
    else:
        base = img
        first_delta = math.sqrt(max(params.sigma**2 - params.assumed_blur**2, 0.01))
    base = ndimage.gaussian_filter(base, first_delta, mode="reflect")

    k = 2.0 ** (1.0 / n)
    deltas = [0.0]
    for i in range(1, n + 3):
        prev = params.sigma * k ** (i - 1)
        deltas.append(math.sqrt((k * prev) ** 2 - prev**2))

    n_octaves = max(1, int(math.log2(min(base.shape))) - 3)
    pyramid: list[list[np.ndarray]] = []
    current = base
    for _ in range(n_octaves):
        octave = [current]
        for i in range(1, n + 3):
            octave.append(ndimage.gaussian_filter(octave[-1], deltas[i], mode="reflect"))
        pyramid.append(octave)
        current = np.ascontiguousarray(octave[n][::2, ::2])  # level n carries blur 2*sigma
    return pyramid


def build_dog_pyramid(pyramid: list[list[np.ndarray]]) -> list[list[np.ndarray]]:
    return [[b - a for a, b in zip(octave, octave[1:])] for octave in pyramid]


def _gradients(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference magnitude and orientation (zeroed 1-px border)."""
    mag = np.zeros_like(image)
    ori = np.zeros_like(image)
    dx = 0.5 * (image[1:-1, 2:] - image[1:-1, :-2])
    dy = 0.5 * (image[2:, 1:-1] - image[:-2, 1:-1])
    mag[1:-1, 1:-1] = np.hypot(dx, dy)
    ori[1:-1, 1:-1] = np.mod(np.arctan2(dy, dx), TWO_PI)
    return mag, ori


def _solve3(h: list[list[float]], g: tuple[float, float, float]):
    """Solve H x = g for a symmetric 3x3 system; None if near-singular."""
    a, b, c = h[0]
    _, d, e = h[1]
    f = h[2][2]
    det = a * (d * f - e * e) - b * (b * f - e * c) + c * (b * e - d * c)
    if abs(det) < 1e-30:
        return None
    g0, g1, g2 = g
    x0 = (g0 * (d * f - e * e) - b * (g1 * f - e * g2) + c * (g1 * e - d * g2)) / det
    x1 = (a * (g1 * f - g2 * e) - g0 * (b * f - e * c) + c * (b * g2 - g1 * c)) / det
    x2 = (a * (d * g2 - g1 * e) - b * (b * g2 - g1 * c) + g0 * (b * e - d * c)) / det
    return x0, x1, x2


def _refine(dog_octave, layer, r, c, params: SiftParams):
    """Iterative quadratic fit; None when diverging or failing the tests.

    Returns (layer, r, c, off_s, off_r, off_c, contrast).
    """
    h, w = dog_octave[0].shape
    border = params.border
    n = params.n_octave_layers
    for it in range(params.max_refine_iter):
        d0, d1, d2 = dog_octave[layer - 1], dog_octave[layer], dog_octave[layer + 1]
        dx = 0.5 * (d1[r, c + 1] - d1[r, c - 1])
        dy = 0.5 * (d1[r + 1, c] - d1[r - 1, c])
        ds = 0.5 * (d2[r, c] - d0[r, c])
        dxx = d1[r, c + 1] + d1[r, c - 1] - 2.0 * d1[r, c]
        dyy = d1[r + 1, c] + d1[r - 1, c] - 2.0 * d1[r, c]
        dss = d2[r, c] + d0[r, c] - 2.0 * d1[r, c]
        dxy = 0.25 * (d1[r + 1, c + 1] - d1[r + 1, c - 1] - d1[r - 1, c + 1] + d1[r - 1, c - 1])
        dxs = 0.25 * (d2[r, c + 1] - d2[r, c - 1] - d0[r, c + 1] + d0[r, c - 1])
        dys = 0.25 * (d2[r + 1, c] - d2[r - 1, c] - d0[r + 1, c] + d0[r - 1, c])
        sol = _solve3(
            [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]], (dx, dy, ds)
        )
        if sol is None:
            return None
        oc, orow, os_ = -sol[0], -sol[1], -sol[2]
        if abs(oc) < 0.5 and abs(orow) < 0.5 and abs(os_) < 0.5:
            contrast = d1[r, c] + 0.5 * (dx * oc + dy * orow + ds * os_)
            if abs(contrast) < params.contrast_threshold:
                return None
            tr = dxx + dyy
            det2 = dxx * dyy - dxy * dxy
            er = params.edge_ratio
            if det2 <= 0.0 or er * tr * tr >= (er + 1.0) ** 2 * det2:
                return None
            return layer, r, c, os_, orow, oc, contrast
        c += int(round(oc))
        r += int(round(orow))
        layer += int(round(os_))
        if not (1 <= layer <= n and border <= r < h - border and border <= c < w - border):
            return None
    return None


def _smooth_circular(hist: np.ndarray) -> np.ndarray:
    """One pass of the 1-4-6-4-1 binomial filter, wrapping around."""
    return (
        6.0 * hist
        + 4.0 * (np.roll(hist, 1) + np.roll(hist, -1))
        + np.roll(hist, 2)
        + np.roll(hist, -2)
    ) / 16.0


def _orientation_peaks(hist: np.ndarray, peak_ratio: float) -> list[float]:
    nbins = len(hist)
    left = np.roll(hist, 1)
    right = np.roll(hist, -1)
    peak_val = hist.max()
    if peak_val <= 0.0:
        return []
    angles = []
    for i in np.nonzero((hist > left) & (hist > right) & (hist >= peak_ratio * peak_val))[0]:
        l, v, rgt = left[i], hist[i], right[i]
        interp = i + 0.5 * (l - rgt) / (l - 2.0 * v + rgt)
        angles.append((interp % nbins) * (TWO_PI / nbins))
    return angles


def sift_extract(
    matrix: PixelMatrix, params: SiftParams | None = None
) -> list[tuple[Keypoint, np.ndarray]]:
    """Keypoints with unit-norm float32 descriptors, strongest first."""
    if matrix.mode is not ColorMode.GREY:
        raise WrongColorMode("sift requires a grey image")
    if min(matrix.width, matrix.height) < MIN_DIM:
        raise ImageTooSmall(
            f"{matrix.width}x{matrix.height} below minimum {MIN_DIM}x{MIN_DIM}"
        )
    params = params or SiftParams()
    kern = _backend.kernels()
    n = params.n_octave_layers
    img = matrix.pixels.astype(np.float64) / 255.0
    pyramid = build_gaussian_pyramid(img, params)
    dog = build_dog_pyramid(pyramid)
    prelim = 0.5 * params.contrast_threshold / n
    rescale = 0.5 if params.double_size else 1.0

    results: list[tuple[Keypoint, np.ndarray]] = []
    seen: set[tuple] = set()
    grad_cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
    for o, dog_octave in enumerate(dog):
        for layer in range(1, n + 1):
            rows, cols = kern.find_extrema(
                dog_octave[layer - 1],
                dog_octave[layer],
                dog_octave[layer + 1],
                prelim,
                params.border,
            )
            for r0, c0 in zip(rows, cols):
                refined = _refine(dog_octave, layer, int(r0), int(c0), params)
                if refined is None:
                    continue
                lyr, r, c, off_s, off_r, off_c, contrast = refined
                y_oct = r + off_r
                x_oct = c + off_c
                sigma_oct = params.sigma * 2.0 ** ((lyr + off_s) / n)
                key = (o, lyr, round(x_oct, 3), round(y_oct, 3))
                if key in seen:
                    continue
                seen.add(key)
                if (o, lyr) not in grad_cache:
                    grad_cache[(o, lyr)] = _gradients(pyramid[o][lyr])
                mag, ori = grad_cache[(o, lyr)]
                ori_sigma = 1.5 * sigma_oct
                radius = int(round(3.0 * ori_sigma))
                hist = kern.orientation_histogram(
                    mag, ori, y_oct, x_oct, radius, ori_sigma, params.n_orientation_bins
                )
                hist = _smooth_circular(hist)
                for angle in _orientation_peaks(hist, params.peak_ratio):
                    raw = kern.descriptor_vector(
                        mag, ori, y_oct, x_oct, angle, 3.0 * sigma_oct
                    )
                    desc = normalize_descriptor(raw)
                    if desc is None:
                        continue
                    kp = Keypoint(
                        x=x_oct * (1 << o) * rescale,
                        y=y_oct * (1 << o) * rescale,
                        scale=params.sigma * 2.0 ** (o + (lyr + off_s) / n) * rescale,
                        orientation=angle % TWO_PI,
                        response=abs(contrast),
                    )
                    results.append((kp, desc))

    results.sort(
        key=lambda kd: (-kd[0].response, kd[0].y, kd[0].x, kd[0].scale, kd[0].orientation)
    )
    if params.max_keypoints and len(results) > params.max_keypoints:
        results = results[: params.max_keypoints]
    return results


def normalize_descriptor(raw: np.ndarray) -> np.ndarray | None:
    """L2 normalize, clamp components at 0.2, renormalize; float32 output."""
    norm = float(np.linalg.norm(raw))
    if norm < 1e-12:
        return None
    clamped = np.minimum(raw / norm, 0.2)
    norm2 = float(np.linalg.norm(clamped))
    if norm2 < 1e-12:
        return None
    return (clamped / norm2).astype(np.float32)
