import numpy as np
import pytest

from icp.pimage import ColorMode, PImage, PixelMatrix


def random_pimage(rng: np.random.Generator, name: str, min_dim=1, max_dim=128) -> PImage:
    """Random grey or RGB image with dimensions in [min_dim, max_dim]."""
    w = int(rng.integers(min_dim, max_dim + 1))
    h = int(rng.integers(min_dim, max_dim + 1))
    if rng.random() < 0.5:
        pixels = rng.integers(0, 256, size=(h, w), dtype=np.uint8)
        return PImage(name, PixelMatrix(ColorMode.GREY, pixels))
    pixels = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    return PImage(name, PixelMatrix(ColorMode.RGB, pixels))


def grey_image(name: str, pixels) -> PImage:
    return PImage(name, PixelMatrix(ColorMode.GREY, np.asarray(pixels, dtype=np.uint8)))


@pytest.fixture
def rng():
    return np.random.default_rng(0xC0FFEE)
