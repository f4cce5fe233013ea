"""Compiled extension vs numpy fallback: same results from both backends."""

import os
import subprocess
import sys

import numpy as np
import pytest
from scipy import ndimage

from icp.bench import texture
from icp.features import (
    _backend,
    available_kernel_backends,
    kernel_backend,
    sift_extract,
    use_kernel_backend,
)
from icp.pimage import ColorMode, PixelMatrix

HAVE_COMPILED = "compiled" in available_kernel_backends()
needs_compiled = pytest.mark.skipif(
    not HAVE_COMPILED, reason="compiled kernel extension not built"
)

PURE = _backend.get("pure")


def _fields(shape=(40, 52), seed=0, blur=2.0):
    rng = np.random.default_rng(seed)
    return [
        np.ascontiguousarray(ndimage.gaussian_filter(rng.standard_normal(shape), blur))
        for _ in range(3)
    ]


def _grad_fields(shape=(48, 48), seed=1):
    rng = np.random.default_rng(seed)
    mag = np.ascontiguousarray(rng.random(shape))
    ori = np.ascontiguousarray(rng.random(shape) * 2.0 * np.pi)
    return mag, ori


# --- backend selection plumbing ---


def test_available_backends_contains_pure():
    names = available_kernel_backends()
    assert isinstance(names, tuple)
    assert "pure" in names
    assert set(names) <= {"pure", "compiled"}


def test_use_backend_round_trip():
    before = kernel_backend()
    prev = _backend.use("pure")
    assert prev == before
    assert kernel_backend() == "pure"
    _backend.use(before)
    assert kernel_backend() == before


def test_use_unknown_backend_rejected():
    with pytest.raises(ValueError):
        use_kernel_backend("gpu")


@needs_compiled
def test_compiled_is_default_when_built():
    assert kernel_backend() == "compiled"


def test_env_override_forces_pure():
    env = dict(os.environ, ICP_PURE_KERNELS="1")
    out = subprocess.run(
        [sys.executable, "-c", "import icp.features as f; print(f.kernel_backend())"],
        env=env,
        capture_output=True,
        text=True,
        check=True,
    )
    assert out.stdout.strip() == "pure"


# --- extrema detection ---


def test_pure_extrema_against_brute_force():
    d0, d1, d2 = _fields(shape=(28, 30), seed=3)
    prelim, border = 0.02, 5
    rows, cols = PURE.find_extrema(d0, d1, d2, prelim, border)
    found = set(zip(rows.tolist(), cols.tolist()))
    h, w = d1.shape
    cube = np.stack([d0, d1, d2])
    expected = set()
    for r in range(border, h - border):
        for c in range(border, w - border):
            v = d1[r, c]
            if abs(v) <= prelim:
                continue
            nb = cube[:, r - 1 : r + 2, c - 1 : c + 2].ravel()
            others = np.delete(nb, 13)          # centre of the 3x3x3 cube
            if (v > others).all() or (v < others).all():
                expected.add((r, c))
    assert found == expected


@needs_compiled
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_extrema_identical_across_backends(seed):
    comp = _backend.get("compiled")
    d0, d1, d2 = _fields(seed=seed)
    for prelim in (0.0, 0.01):
        pr, pc = PURE.find_extrema(d0, d1, d2, prelim, 5)
        cr, cc = comp.find_extrema(d0, d1, d2, prelim, 5)
        assert np.array_equal(pr, cr)
        assert np.array_equal(pc, cc)


def test_extrema_empty_when_window_degenerate():
    d0, d1, d2 = _fields(shape=(10, 10), seed=0)
    rows, cols = PURE.find_extrema(d0, d1, d2, 0.0, 5)
    assert rows.size == 0 and cols.size == 0


# --- orientation histogram ---


def test_pure_histogram_conserves_weight():
    mag, ori = _grad_fields(seed=7)
    hist = PURE.orientation_histogram(mag, ori, 24.3, 20.7, 6, 2.4, 36)
    assert hist.shape == (36,)
    assert (hist >= 0).all()
    # total mass equals the Gaussian-weighted magnitudes of the window
    y0, y1 = max(round(24.3) - 6, 1), min(round(24.3) + 6, mag.shape[0] - 2)
    x0, x1 = max(round(20.7) - 6, 1), min(round(20.7) + 6, mag.shape[1] - 2)
    dy = (np.arange(y0, y1 + 1) - 24.3)[:, None]
    dx = (np.arange(x0, x1 + 1) - 20.7)[None, :]
    w = np.exp(-(dy * dy + dx * dx) / (2 * 2.4 * 2.4)) * mag[y0 : y1 + 1, x0 : x1 + 1]
    assert hist.sum() == pytest.approx(w.sum(), rel=1e-12)


@needs_compiled
@pytest.mark.parametrize(
    "y,x,radius,sigma",
    [
        (24.3, 20.7, 6, 2.4),
        (2.0, 2.0, 8, 3.0),      # clipped at the top-left border
        (46.9, 46.1, 5, 1.5),    # clipped at the bottom-right border
        (20.0, 30.0, 12, 4.0),
    ],
)
def test_histogram_matches_across_backends(y, x, radius, sigma):
    comp = _backend.get("compiled")
    mag, ori = _grad_fields(seed=11)
    hp = PURE.orientation_histogram(mag, ori, y, x, radius, sigma, 36)
    hc = comp.orientation_histogram(mag, ori, y, x, radius, sigma, 36)
    np.testing.assert_allclose(hc, hp, rtol=1e-10, atol=1e-12)


def test_histogram_outside_image_is_zero():
    mag, ori = _grad_fields(seed=1)
    hist = PURE.orientation_histogram(mag, ori, -50.0, -50.0, 3, 1.5, 36)
    assert not hist.any()


# --- descriptor accumulation ---


@needs_compiled
@pytest.mark.parametrize(
    "y,x,angle,hist_width",
    [
        (24.0, 24.0, 0.0, 4.8),
        (20.5, 27.25, 1.234, 3.6),
        (10.0, 38.0, 5.9, 6.0),
        (4.0, 4.0, 2.5, 4.8),    # window partly outside the image
    ],
)
def test_descriptor_matches_across_backends(y, x, angle, hist_width):
    comp = _backend.get("compiled")
    mag, ori = _grad_fields(seed=13)
    dp = PURE.descriptor_vector(mag, ori, y, x, angle, hist_width)
    dc = comp.descriptor_vector(mag, ori, y, x, angle, hist_width)
    assert dp.shape == dc.shape == (128,)
    np.testing.assert_allclose(dc, dp, rtol=1e-9, atol=1e-12)


def test_pure_descriptor_basic_properties():
    mag, ori = _grad_fields(seed=5)
    desc = PURE.descriptor_vector(mag, ori, 24.0, 24.0, 0.7, 4.8)
    assert desc.shape == (128,)
    assert (desc >= 0).all()
    assert desc.sum() > 0


def test_descriptor_rotational_consistency():
    # rotating the query angle by 2*pi changes nothing
    mag, ori = _grad_fields(seed=5)
    a = PURE.descriptor_vector(mag, ori, 20.0, 20.0, 1.0, 4.0)
    b = PURE.descriptor_vector(mag, ori, 20.0, 20.0, 1.0 + 2 * np.pi, 4.0)
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)


# --- full pipeline equivalence ---


@needs_compiled
def test_sift_pipeline_identical_results():
    matrix = PixelMatrix(ColorMode.GREY, texture(96, seed=4))
    before = kernel_backend()
    try:
        use_kernel_backend("pure")
        pure_pairs = sift_extract(matrix)
        use_kernel_backend("compiled")
        comp_pairs = sift_extract(matrix)
    finally:
        use_kernel_backend(before)
    assert len(pure_pairs) == len(comp_pairs)
    for (kp_p, d_p), (kp_c, d_c) in zip(pure_pairs, comp_pairs):
        assert kp_p.x == pytest.approx(kp_c.x, abs=1e-9)
        assert kp_p.y == pytest.approx(kp_c.y, abs=1e-9)
        assert kp_p.scale == pytest.approx(kp_c.scale, abs=1e-9)
        assert kp_p.orientation == pytest.approx(kp_c.orientation, abs=1e-9)
        np.testing.assert_allclose(d_c, d_p, atol=2e-6)   # float32 rounding
