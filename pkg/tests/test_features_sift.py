"""Scale-space keypoints: pyramid structure, descriptor invariants, ordering."""

import math

import numpy as np
import pytest

from icp.bench import texture
from icp.errors import ImageTooSmall, WrongColorMode
from icp.features.sift import (
    SiftParams,
    build_dog_pyramid,
    build_gaussian_pyramid,
    normalize_descriptor,
    sift_extract,
)
from icp.pimage import ColorMode, PixelMatrix

TWO_PI = 2.0 * math.pi


def _grey(arr):
    return PixelMatrix(ColorMode.GREY, arr.astype(np.uint8))


@pytest.fixture(scope="module")
def tex_pairs():
    return sift_extract(_grey(texture(96, seed=5)))


# --- pyramid structure ---


def test_pyramid_shape_and_octave_count():
    params = SiftParams()
    img = texture(96, seed=1).astype(np.float64) / 255.0
    pyr = build_gaussian_pyramid(img, params)
    assert len(pyr) == int(math.log2(96)) - 3
    for o, octave in enumerate(pyr):
        assert len(octave) == params.n_octave_layers + 3
        want = 96 // (1 << o)
        assert all(level.shape == (want, want) for level in octave)


def test_pyramid_blur_is_monotone():
    # each level is a further blur of the previous: variance cannot grow
    img = texture(64, seed=2).astype(np.float64) / 255.0
    pyr = build_gaussian_pyramid(img, SiftParams())
    for octave in pyr:
        variances = [float(level.var()) for level in octave]
        assert all(b <= a + 1e-12 for a, b in zip(variances, variances[1:]))


def test_dog_pyramid_is_pairwise_difference():
    img = texture(64, seed=2).astype(np.float64) / 255.0
    pyr = build_gaussian_pyramid(img, SiftParams())
    dog = build_dog_pyramid(pyr)
    for octave, diffs in zip(pyr, dog):
        assert len(diffs) == len(octave) - 1
        for i, d in enumerate(diffs):
            assert np.array_equal(d, octave[i + 1] - octave[i])


def test_tiny_image_still_has_one_octave():
    img = np.zeros((16, 16))
    assert len(build_gaussian_pyramid(img, SiftParams())) == 1


# --- extraction invariants ---


def test_finds_keypoints_on_texture(tex_pairs):
    assert len(tex_pairs) > 10


def test_descriptors_unit_norm_float32(tex_pairs):
    for _, desc in tex_pairs:
        assert desc.dtype == np.float32
        assert desc.shape == (128,)
        assert abs(float(np.linalg.norm(desc)) - 1.0) <= 1e-6
        assert float(desc.min()) >= 0.0


def test_keypoints_inside_image(tex_pairs):
    for kp, _ in tex_pairs:
        assert 0.0 <= kp.x < 96.0
        assert 0.0 <= kp.y < 96.0
        assert kp.scale > 0.0
        assert 0.0 <= kp.orientation < TWO_PI
        assert kp.response > 0.0


def test_sorted_strongest_first(tex_pairs):
    keys = [
        (-kp.response, kp.y, kp.x, kp.scale, kp.orientation) for kp, _ in tex_pairs
    ]
    assert keys == sorted(keys)


def test_no_duplicate_keypoints(tex_pairs):
    seen = [(kp.x, kp.y, kp.scale, kp.orientation) for kp, _ in tex_pairs]
    assert len(seen) == len(set(seen))


def test_deterministic():
    img = _grey(texture(64, seed=9))
    a = sift_extract(img)
    b = sift_extract(img)
    assert [kp for kp, _ in a] == [kp for kp, _ in b]
    assert all(np.array_equal(da, db) for (_, da), (_, db) in zip(a, b))


def test_max_keypoints_truncates():
    img = _grey(texture(96, seed=5))
    full = sift_extract(img)
    capped = sift_extract(img, SiftParams(max_keypoints=5))
    assert len(capped) == 5
    assert [kp for kp, _ in capped] == [kp for kp, _ in full[:5]]


def test_flat_image_has_no_keypoints():
    assert sift_extract(_grey(np.full((64, 64), 77))) == []


def test_rejects_rgb():
    rgb = PixelMatrix(ColorMode.RGB, np.zeros((32, 32, 3), dtype=np.uint8))
    with pytest.raises(WrongColorMode):
        sift_extract(rgb)


def test_rejects_below_minimum_size():
    with pytest.raises(ImageTooSmall):
        sift_extract(_grey(np.zeros((15, 40))))
    sift_extract(_grey(np.zeros((16, 16))))  # minimum size: allowed


# --- descriptor normalization ---


def test_normalize_zero_vector_is_rejected():
    assert normalize_descriptor(np.zeros(128)) is None


def test_normalize_small_components_untouched():
    raw = np.ones(128)  # normalizes to 1/sqrt(128) ~ 0.088, below the clamp
    desc = normalize_descriptor(raw)
    assert np.allclose(desc, 1.0 / math.sqrt(128.0))


def test_normalize_clamps_spikes():
    raw = np.zeros(128)
    raw[0] = 10.0
    desc = normalize_descriptor(raw)
    assert desc[0] == pytest.approx(1.0)  # lone spike: clamp then renormalize
    raw2 = np.zeros(128)
    raw2[0], raw2[1] = 3.0, 4.0
    desc2 = normalize_descriptor(raw2)
    # 0.6/0.8 both clamp to 0.2, renormalizing to equal weight
    assert desc2[0] == pytest.approx(1.0 / math.sqrt(2.0))
    assert desc2[1] == pytest.approx(1.0 / math.sqrt(2.0))
