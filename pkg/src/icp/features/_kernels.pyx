# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-keypoint kernels; same interface as the numpy fallback.

Scalar C loops replace the vectorized accumulations of _kernels_py, so the
two backends agree to float rounding rather than bit-for-bit.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, exp, floor, fmod, rint, sin, sqrt

cnp.import_array()

cdef double TWO_PI = 6.283185307179586


def find_extrema(double[:, ::1] d0, double[:, ::1] d1, double[:, ::1] d2,
                 double prelim, Py_ssize_t border):
    """Strict 26-neighbour extrema of the middle difference-of-Gaussian layer."""
    cdef Py_ssize_t h = d1.shape[0]
    cdef Py_ssize_t w = d1.shape[1]
    cdef list rows = []
    cdef list cols = []
    cdef Py_ssize_t r, c
    cdef int dy, dx
    cdef double v
    cdef bint ok
    if h <= 2 * border or w <= 2 * border:
        empty = np.empty(0, dtype=np.intp)
        return empty, empty.copy()
    for r in range(border, h - border):
        for c in range(border, w - border):
            v = d1[r, c]
            if v > prelim:
                ok = True
                for dy in range(-1, 2):
                    for dx in range(-1, 2):
                        if v <= d0[r + dy, c + dx] or v <= d2[r + dy, c + dx]:
                            ok = False
                            break
                        if (dy != 0 or dx != 0) and v <= d1[r + dy, c + dx]:
                            ok = False
                            break
                    if not ok:
                        break
                if ok:
                    rows.append(r)
                    cols.append(c)
            elif v < -prelim:
                ok = True
                for dy in range(-1, 2):
                    for dx in range(-1, 2):
                        if v >= d0[r + dy, c + dx] or v >= d2[r + dy, c + dx]:
                            ok = False
                            break
                        if (dy != 0 or dx != 0) and v >= d1[r + dy, c + dx]:
                            ok = False
                            break
                    if not ok:
                        break
                if ok:
                    rows.append(r)
                    cols.append(c)
    return np.asarray(rows, dtype=np.intp), np.asarray(cols, dtype=np.intp)


def orientation_histogram(double[:, ::1] mag, double[:, ::1] ori,
                          double y, double x, Py_ssize_t radius,
                          double sigma, int nbins=36):
    """Gaussian-weighted gradient-orientation histogram around (x, y)."""
    cdef Py_ssize_t h = mag.shape[0]
    cdef Py_ssize_t w = mag.shape[1]
    cdef Py_ssize_t cy = int(round(y))
    cdef Py_ssize_t cx = int(round(x))
    cdef Py_ssize_t y0 = cy - radius
    cdef Py_ssize_t y1 = cy + radius
    cdef Py_ssize_t x0 = cx - radius
    cdef Py_ssize_t x1 = cx + radius
    if y0 < 1:
        y0 = 1
    if y1 > h - 2:
        y1 = h - 2
    if x0 < 1:
        x0 = 1
    if x1 > w - 2:
        x1 = w - 2
    hist_arr = np.zeros(nbins, dtype=np.float64)
    if y0 > y1 or x0 > x1:
        return hist_arr
    cdef double[::1] hist = hist_arr
    cdef double two_s2 = 2.0 * sigma * sigma
    cdef double bscale = nbins / TWO_PI
    cdef Py_ssize_t rr, cc
    cdef double dyf, dxf, wgt
    cdef long b
    for rr in range(y0, y1 + 1):
        dyf = rr - y
        for cc in range(x0, x1 + 1):
            dxf = cc - x
            wgt = exp(-(dyf * dyf + dxf * dxf) / two_s2) * mag[rr, cc]
            b = <long>rint(ori[rr, cc] * bscale)
            if b >= nbins:
                b -= nbins
            hist[b] += wgt
    return hist_arr


def descriptor_vector(double[:, ::1] mag, double[:, ::1] ori,
                      double y, double x, double angle, double hist_width,
                      int d=4, int nbins=8):
    """4x4x8 gradient histogram descriptor, trilinearly interpolated."""
    cdef Py_ssize_t h = mag.shape[0]
    cdef Py_ssize_t w = mag.shape[1]
    cdef Py_ssize_t cy = int(round(y))
    cdef Py_ssize_t cx = int(round(x))
    cdef double cos_a = cos(angle)
    cdef double sin_a = sin(angle)
    cdef double bins_per_rad = nbins / TWO_PI
    cdef Py_ssize_t radius = int(round(hist_width * sqrt(2.0) * (d + 1) * 0.5))
    cdef Py_ssize_t maxr = <Py_ssize_t>sqrt(<double>(h * h + w * w))
    if radius > maxr:
        radius = maxr
    out_arr = np.zeros(d * d * nbins, dtype=np.float64)
    hist_arr = np.zeros((d + 2) * (d + 2) * nbins, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double[::1] hist = hist_arr
    cdef double denom = 0.5 * d * d
    cdef double half = 0.5 * d - 0.5
    cdef Py_ssize_t dr, dc, yy, xx, r, c, o
    cdef double r_rot, c_rot, rbin, cbin, wgt, o_val, obin, fr, fc, fo, wr, wc
    cdef long r0, c0, o0, ir, ic, io, ob
    for dr in range(-radius, radius + 1):
        yy = cy + dr
        if yy <= 0 or yy >= h - 1:
            continue
        for dc in range(-radius, radius + 1):
            xx = cx + dc
            if xx <= 0 or xx >= w - 1:
                continue
            r_rot = (dr * cos_a - dc * sin_a) / hist_width
            c_rot = (dc * cos_a + dr * sin_a) / hist_width
            rbin = r_rot + half
            cbin = c_rot + half
            if rbin <= -1.0 or rbin >= d or cbin <= -1.0 or cbin >= d:
                continue
            wgt = exp(-(r_rot * r_rot + c_rot * c_rot) / denom) * mag[yy, xx]
            o_val = fmod(ori[yy, xx] - angle, TWO_PI)
            if o_val < 0.0:
                o_val += TWO_PI
            obin = o_val * bins_per_rad
            r0 = <long>floor(rbin)
            c0 = <long>floor(cbin)
            o0 = <long>floor(obin)
            fr = rbin - r0
            fc = cbin - c0
            fo = obin - o0
            for ir in range(2):
                wr = wgt * (fr if ir == 1 else 1.0 - fr)
                for ic in range(2):
                    wc = wr * (fc if ic == 1 else 1.0 - fc)
                    for io in range(2):
                        ob = (o0 + io) % nbins
                        hist[((r0 + 1 + ir) * (d + 2) + (c0 + 1 + ic)) * nbins + ob] += (
                            wc * (fo if io == 1 else 1.0 - fo)
                        )
    for r in range(d):
        for c in range(d):
            for o in range(nbins):
                out[(r * d + c) * nbins + o] = hist[((r + 1) * (d + 2) + (c + 1)) * nbins + o]
    return out_arr
