"""Corner detector: geometry on a known shape, thresholds, ordering."""

import numpy as np
import pytest

from icp.bench import texture, white_square
from icp.errors import ImageTooSmall, UnsupportedFormat, WrongColorMode
from icp.features import EXTRACTORS, HarrisParams, extract, harris
from icp.pimage import ColorMode, PixelMatrix


def _grey(arr):
    return PixelMatrix(ColorMode.GREY, arr.astype(np.uint8))


def test_white_square_has_exactly_four_corners():
    # 20-px white square centered in 64 px: corners at 22 and 41 on both axes
    kps = harris(_grey(white_square(64, 20)))
    assert len(kps) == 4
    assert {(kp.x, kp.y) for kp in kps} == {
        (22.0, 22.0),
        (41.0, 22.0),
        (22.0, 41.0),
        (41.0, 41.0),
    }


def test_white_square_corner_metadata():
    kps = harris(_grey(white_square(64, 20)))
    for kp in kps:
        assert kp.orientation == 0.0
        assert kp.scale == HarrisParams().sigma
        assert kp.response > 0
    # the four corners of a symmetric square respond identically
    responses = [kp.response for kp in kps]
    assert max(responses) - min(responses) <= 1e-6 * max(responses)


def test_inverted_square_has_same_corners():
    kps = harris(_grey(255 - white_square(64, 20)))
    assert {(kp.x, kp.y) for kp in kps} == {
        (22.0, 22.0),
        (41.0, 22.0),
        (22.0, 41.0),
        (41.0, 41.0),
    }


@pytest.mark.parametrize("value", [0, 128, 255])
def test_uniform_image_has_no_corners(value):
    assert harris(_grey(np.full((32, 32), value))) == []


def test_rejects_rgb_input():
    rgb = PixelMatrix(ColorMode.RGB, np.zeros((16, 16, 3), dtype=np.uint8))
    with pytest.raises(WrongColorMode):
        harris(rgb)


def test_rejects_too_small_image():
    with pytest.raises(ImageTooSmall):
        harris(_grey(np.zeros((7, 12))))
    with pytest.raises(ImageTooSmall):
        harris(_grey(np.zeros((12, 7))))
    harris(_grey(np.zeros((8, 8))))  # at the minimum: allowed


def test_sorted_by_descending_response():
    kps = harris(_grey(texture(96, seed=11)))
    assert len(kps) > 4
    responses = [kp.response for kp in kps]
    assert responses == sorted(responses, reverse=True)


def test_responses_above_relative_threshold():
    params = HarrisParams()
    kps = harris(_grey(texture(96, seed=11)), params)
    top = max(kp.response for kp in kps)
    assert all(kp.response > params.response_threshold * top for kp in kps)


def test_suppression_radius_is_respected():
    params = HarrisParams()
    kps = harris(_grey(texture(96, seed=11)), params)
    r2 = params.nms_radius**2
    for i, a in enumerate(kps):
        for b in kps[i + 1 :]:
            assert (a.x - b.x) ** 2 + (a.y - b.y) ** 2 > r2


def test_deterministic():
    img = _grey(texture(64, seed=3))
    assert harris(img) == harris(img)


def test_higher_threshold_keeps_subset():
    img = _grey(texture(96, seed=11))
    loose = {(kp.x, kp.y) for kp in harris(img, HarrisParams(response_threshold=0.01))}
    strict = {(kp.x, kp.y) for kp in harris(img, HarrisParams(response_threshold=0.3))}
    assert strict < loose


def test_registry_dispatch():
    pairs = extract("harris", _grey(white_square(64, 20)))
    assert len(pairs) == 4
    for kp, desc in pairs:
        assert desc.size == 0
        assert desc.dtype == np.float32
    assert set(EXTRACTORS) == {"harris", "sift"}
    with pytest.raises(UnsupportedFormat):
        extract("surf", _grey(white_square()))
