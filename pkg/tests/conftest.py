import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from imgcurate.imgproc import ImagePlane, encode_png


def textured_image(rng: np.random.Generator, size: int = 192) -> ImagePlane:
    """Natural-looking multi-octave texture with color variation and sharp detail."""
    base = np.zeros((size, size), dtype=np.float64)
    for octave, sigma in enumerate([16.0, 8.0, 4.0, 2.0, 1.0, 0.0]):
        layer = rng.normal(0.0, 1.0, (size, size))
        if sigma > 0:
            layer = gaussian_filter(layer, sigma)
        base += layer / (1.6**octave)
    base = (base - base.min()) / (base.max() - base.min() + 1e-12)
    rgb = np.stack(
        [
            np.clip(base + rng.normal(0.0, 0.03, base.shape), 0, 1),
            np.clip(base * rng.uniform(0.7, 1.0) + rng.normal(0.0, 0.03, base.shape), 0, 1),
            np.clip(base * rng.uniform(0.5, 0.9) + rng.normal(0.0, 0.03, base.shape), 0, 1),
        ],
        axis=2,
    )
    return ImagePlane((0.05 + 0.9 * rgb).astype(np.float32))


def checkerboard(size: int = 8, cell: int = 1) -> ImagePlane:
    y, x = np.mgrid[0:size, 0:size]
    board = (((y // cell) + (x // cell)) % 2).astype(np.float32)
    return ImagePlane(board[:, :, None])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def fixture_image(rng):
    return textured_image(rng, 192)


def write_image_dir(path, images):
    """Write ImagePlanes as PNGs named img_###.png; returns list of file paths."""
    import os

    os.makedirs(path, exist_ok=True)
    out = []
    for i, img in enumerate(images):
        p = os.path.join(path, f"img_{i:03d}.png")
        with open(p, "wb") as f:
            f.write(encode_png(img))
        out.append(p)
    return out
