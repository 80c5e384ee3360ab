"""A synthetic test scene so the demos run without any image files."""

import sys

import numpy as np

from ipsr.imgcore import PlanarImage, load_image


def scene(size: int = 192, seed: int = 0) -> PlanarImage:
    """Smooth shading, hard edges, a ring pattern and fine texture."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    r = 0.35 + 0.4 * xx
    g = 0.3 + 0.5 * yy
    b = 0.6 - 0.3 * xx * yy
    img = np.stack([r, g, b])
    # a few rectangles with sharp borders
    for _ in range(6):
        y0, x0 = rng.integers(0, size - 40, 2)
        h, w = rng.integers(12, 40, 2)
        img[:, y0 : y0 + h, x0 : x0 + w] = rng.random((3, 1, 1))
    rings = 0.5 + 0.5 * np.cos(60 * np.hypot(yy - 0.7, xx - 0.3))
    mask = np.hypot(yy - 0.7, xx - 0.3) < 0.2
    img[:, mask] = 0.3 + 0.5 * rings[mask]
    img += 0.03 * rng.standard_normal((3, size, size))
    return PlanarImage(np.clip(img, 0, 1))


def image_from_argv(size: int = 192) -> PlanarImage:
    """The image named on the command line, else the synthetic scene."""
    if len(sys.argv) > 1:
        img = load_image(sys.argv[1])
        return PlanarImage(img.data[:, : img.height - img.height % 3, : img.width - img.width % 3])
    return scene(size)
