"""Pure numpy implementations of the hot per-keypoint kernels.

Fallback for the compiled extension; same signatures and semantics.  The
vectorized accumulations sum in a different order than the C loops, so
results agree with the compiled backend to float rounding, not bit-for-bit.
"""

from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi


def find_extrema(
    d0: np.ndarray, d1: np.ndarray, d2: np.ndarray, prelim: float, border: int
) -> tuple[np.ndarray, np.ndarray]:
    """Strict 26-neighbour extrema of the middle difference-of-Gaussian layer.

    Returns (rows, cols) of pixels in d1 (excluding ``border``) whose value
    exceeds ``prelim`` in magnitude and is strictly greater (or strictly
    smaller) than all neighbours in the 3x3x3 cube.
    """
    h, w = d1.shape
    if h <= 2 * border or w <= 2 * border:
        empty = np.empty(0, dtype=np.intp)
        return empty, empty
    core = (slice(border, h - border), slice(border, w - border))
    v = d1[core]
    greater = v > prelim
    smaller = v < -prelim
    for layer in (d0, d1, d2):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if layer is d1 and dy == 0 and dx == 0:
                    continue
                nb = layer[border + dy : h - border + dy, border + dx : w - border + dx]
                greater &= v > nb
                smaller &= v < nb
                if not (greater.any() or smaller.any()):
                    rows = np.empty(0, dtype=np.intp)
                    return rows, rows.copy()
    rows, cols = np.nonzero(greater | smaller)
    return rows + border, cols + border


def orientation_histogram(
    mag: np.ndarray,
    ori: np.ndarray,
    y: float,
    x: float,
    radius: int,
    sigma: float,
    nbins: int = 36,
) -> np.ndarray:
    """Gaussian-weighted gradient-orientation histogram around (x, y).

    Offsets are measured from the subpixel keypoint position; the window is
    clipped one pixel inside the image so gradient values are always defined.
    """
    h, w = mag.shape
    cy = int(round(y))
    cx = int(round(x))
    y0 = max(cy - radius, 1)
    y1 = min(cy + radius, h - 2)
    x0 = max(cx - radius, 1)
    x1 = min(cx + radius, w - 2)
    hist = np.zeros(nbins, dtype=np.float64)
    if y0 > y1 or x0 > x1:
        return hist
    sub_m = mag[y0 : y1 + 1, x0 : x1 + 1]
    sub_o = ori[y0 : y1 + 1, x0 : x1 + 1]
    dy = (np.arange(y0, y1 + 1, dtype=np.float64) - y)[:, None]
    dx = (np.arange(x0, x1 + 1, dtype=np.float64) - x)[None, :]
    weight = np.exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma)) * sub_m
    bins = np.rint(sub_o * (nbins / TWO_PI)).astype(np.int64) % nbins
    np.add.at(hist, bins.ravel(), weight.ravel())
    return hist


def descriptor_vector(
    mag: np.ndarray,
    ori: np.ndarray,
    y: float,
    x: float,
    angle: float,
    hist_width: float,
    d: int = 4,
    nbins: int = 8,
) -> np.ndarray:
    """4x4x8 gradient histogram descriptor, trilinearly interpolated.

    ``hist_width`` is the side of one spatial cell in pixels; the sampling
    window is the rotated d x d grid plus interpolation margin.  Returns the
    raw (unnormalized) 128-vector.
    """
    h, w = mag.shape
    cy = int(round(y))
    cx = int(round(x))
    cos_a = np.cos(angle)
    sin_a = np.sin(angle)
    bins_per_rad = nbins / TWO_PI
    radius = int(round(hist_width * np.sqrt(2.0) * (d + 1) * 0.5))
    radius = min(radius, int(np.sqrt(h * h + w * w)))

    rr = np.arange(-radius, radius + 1, dtype=np.float64)
    dc, dr = np.meshgrid(rr, rr)
    # offsets in the frame rotated by -angle, in units of one spatial cell
    r_rot = (dr * cos_a - dc * sin_a) / hist_width
    c_rot = (dc * cos_a + dr * sin_a) / hist_width
    rbin = r_rot + 0.5 * d - 0.5
    cbin = c_rot + 0.5 * d - 0.5
    yy = cy + dr.astype(np.int64)
    xx = cx + dc.astype(np.int64)
    valid = (
        (rbin > -1.0)
        & (rbin < d)
        & (cbin > -1.0)
        & (cbin < d)
        & (yy > 0)
        & (yy < h - 1)
        & (xx > 0)
        & (xx < w - 1)
    )
    if not valid.any():
        return np.zeros(d * d * nbins, dtype=np.float64)
    rbin = rbin[valid]
    cbin = cbin[valid]
    r_rot = r_rot[valid]
    c_rot = c_rot[valid]
    yy = yy[valid]
    xx = xx[valid]
    weight = np.exp(-(r_rot * r_rot + c_rot * c_rot) / (0.5 * d * d)) * mag[yy, xx]
    obin = ((ori[yy, xx] - angle) % TWO_PI) * bins_per_rad

    r0 = np.floor(rbin).astype(np.int64)
    c0 = np.floor(cbin).astype(np.int64)
    o0 = np.floor(obin).astype(np.int64)
    fr = rbin - r0
    fc = cbin - c0
    fo = obin - o0

    hist = np.zeros((d + 2, d + 2, nbins), dtype=np.float64)
    for ir, wr in ((0, 1.0 - fr), (1, fr)):
        for ic, wc in ((0, 1.0 - fc), (1, fc)):
            for io, wo in ((0, 1.0 - fo), (1, fo)):
                contrib = weight * wr * wc * wo
                np.add.at(
                    hist,
                    (r0 + 1 + ir, c0 + 1 + ic, (o0 + io) % nbins),
                    contrib,
                )
    return hist[1 : d + 1, 1 : d + 1, :].reshape(-1)
