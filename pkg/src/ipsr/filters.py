"""Blur kernels, convolution, resampling and sharpening.

Border handling is reflect-101 (``dcb|abcd|cba``) throughout, which is
scipy.ndimage's ``"mirror"`` mode.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal, Union

import numpy as np
from scipy import ndimage

from .imgcore import PlanarImage

MAX_GAUSSIAN_SIZE = 21

ResampleMethod = Literal["nearest", "bilinear", "bicubic", "area"]
RESAMPLE_METHODS: tuple[str, ...] = ("nearest", "bilinear", "bicubic", "area")


@dataclass(frozen=True, eq=False)
class Kernel2D:
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, copy=True)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"kernel must be square, got shape {w.shape}")
        if w.shape[0] % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {w.shape[0]}")
        if not np.all(np.isfinite(w)):
            raise ValueError("kernel weights must be finite")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def delta(cls, size: int) -> "Kernel2D":
        w = np.zeros((size, size))
        w[size // 2, size // 2] = 1.0
        return cls(w)

    def normalized(self) -> "Kernel2D":
        s = self.weights.sum()
        if abs(s) < 1e-12:
            raise ValueError("cannot normalize a kernel with zero sum")
        return Kernel2D(self.weights / s)

    def to_text(self) -> str:
        rows = [" ".join(f"{v:.17g}" for v in row) for row in self.weights]
        return f"{self.size}\n" + "\n".join(rows) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Kernel2D":
        lines = [ln.split() for ln in text.strip().splitlines() if ln.strip()]
        if not lines or len(lines[0]) != 1:
            raise ValueError("kernel text must start with a size line")
        size = int(lines[0][0])
        rows = lines[1:]
        if len(rows) != size or any(len(r) != size for r in rows):
            raise ValueError(f"kernel text does not hold a {size}x{size} grid")
        return cls(np.array([[float(v) for v in r] for r in rows]))


def save_kernel(k: Kernel2D, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(k.to_text())


def load_kernel(path: str | os.PathLike) -> Kernel2D:
    with open(path, encoding="utf-8") as fh:
        return Kernel2D.from_text(fh.read())


def default_gaussian_size(sigma: float) -> int:
    return min(2 * math.ceil(3 * sigma) + 1, MAX_GAUSSIAN_SIZE)


@dataclass(frozen=True)
class IsoGaussian:
    sigma: float
    size: int | None = None


@dataclass(frozen=True)
class AnisoGaussian:
    sigma_x: float
    sigma_y: float
    theta: float
    size: int | None = None


@dataclass(frozen=True)
class Sinc:
    cutoff: float
    size: int = 21


BlurSpec = Union[IsoGaussian, AnisoGaussian, Sinc]


def _check_size(size: int) -> int:
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd integer, got {size}")
    return size


def make_blur_kernel(spec: BlurSpec) -> Kernel2D:
    """Build a normalized blur kernel centered on its middle tap."""
    if isinstance(spec, IsoGaussian):
        if spec.sigma <= 0:
            raise ValueError("sigma must be positive")
        spec = AnisoGaussian(spec.sigma, spec.sigma, 0.0, spec.size)
    if isinstance(spec, AnisoGaussian):
        if spec.sigma_x <= 0 or spec.sigma_y <= 0:
            raise ValueError("sigma_x and sigma_y must be positive")
        size = spec.size or default_gaussian_size(max(spec.sigma_x, spec.sigma_y))
        r = _check_size(size) // 2
        c, s = math.cos(spec.theta), math.sin(spec.theta)
        rot = np.array([[c, -s], [s, c]])
        cov = rot @ np.diag([spec.sigma_x**2, spec.sigma_y**2]) @ rot.T
        inv = np.linalg.inv(cov)
        yy, xx = np.mgrid[-r : r + 1, -r : r + 1].astype(np.float64)
        q = inv[0, 0] * xx * xx + (inv[0, 1] + inv[1, 0]) * xx * yy + inv[1, 1] * yy * yy
        w = np.exp(-0.5 * q)
        return Kernel2D(w / w.sum())
    if isinstance(spec, Sinc):
        if not 0 < spec.cutoff <= math.pi:
            raise ValueError(f"sinc cutoff must lie in (0, pi], got {spec.cutoff}")
        r = _check_size(spec.size) // 2
        t = np.arange(-r, r + 1, dtype=np.float64)
        window = 0.54 + 0.46 * np.cos(np.pi * t / r) if r > 0 else np.ones(1)
        s1 = np.sinc(spec.cutoff * t / np.pi) * window
        w = np.outer(s1, s1)
        return Kernel2D(w / w.sum())
    raise TypeError(f"unknown blur spec {spec!r}")


def convolve(img: PlanarImage, k: Kernel2D) -> PlanarImage:
    """Per-channel 2D correlation, same-size output, reflect-101 borders."""
    if k.size > min(img.height, img.width):
        raise ValueError(f"kernel of size {k.size} is larger than {img.height}x{img.width} image")
    out = np.stack([ndimage.correlate(ch, k.weights, mode="mirror") for ch in img.data])
    return PlanarImage(out)


def reflect101(idx: np.ndarray, n: int) -> np.ndarray:
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n - 2
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def _cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


def _triangle(x: np.ndarray) -> np.ndarray:
    return np.clip(1.0 - np.abs(x), 0.0, None)


@lru_cache(maxsize=256)
def resize_matrix(n_in: int, n_out: int, method: str) -> np.ndarray:
    """Dense ``(n_out, n_in)`` matrix resampling one axis.

    Kernel methods (bilinear, bicubic) widen their support by the
    downscale ratio. Out-of-range taps fold back with reflect-101.
    """
    if n_in < 1 or n_out < 1:
        raise ValueError("resample sizes must be at least 1")
    ratio = n_in / n_out
    dst = np.arange(n_out, dtype=np.float64)
    m = np.zeros((n_out, n_in))
    if method == "nearest":
        src = np.minimum(np.floor((dst + 0.5) * ratio).astype(np.int64), n_in - 1)
        m[np.arange(n_out), src] = 1.0
    elif method == "area":
        lo, hi = dst * ratio, (dst + 1) * ratio
        edges = np.arange(n_in + 1, dtype=np.float64)
        overlap = np.minimum(hi[:, None], edges[None, 1:]) - np.maximum(lo[:, None], edges[None, :-1])
        m = np.clip(overlap, 0.0, None)
        m /= m.sum(axis=1, keepdims=True)
    elif method in ("bilinear", "bicubic"):
        kern, radius = (_cubic, 2.0) if method == "bicubic" else (_triangle, 1.0)
        stretch = max(ratio, 1.0)
        support = radius * stretch
        center = (dst + 0.5) * ratio - 0.5
        left = np.floor(center - support).astype(np.int64)
        taps = int(math.ceil(2 * support)) + 2
        idx = left[:, None] + np.arange(taps)[None, :]
        w = kern((center[:, None] - idx) / stretch)
        w /= w.sum(axis=1, keepdims=True)
        folded = reflect101(idx, n_in)
        rows = np.repeat(np.arange(n_out), taps)
        np.add.at(m, (rows, folded.ravel()), w.ravel())
    else:
        raise ValueError(f"unknown resample method {method!r}")
    m.flags.writeable = False
    return m


def resample_array(data: np.ndarray, out_h: int, out_w: int, method: str) -> np.ndarray:
    """Resample the last two axes of ``data``."""
    mh = resize_matrix(data.shape[-2], out_h, method)
    mw = resize_matrix(data.shape[-1], out_w, method)
    return mh @ data @ mw.T


def resample(img: PlanarImage, out_h: int, out_w: int, method: ResampleMethod = "bicubic") -> PlanarImage:
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got {out_h}x{out_w}")
    return PlanarImage(resample_array(img.data, out_h, out_w, method))


def gaussian_blur(img: PlanarImage, sigma: float) -> PlanarImage:
    size = default_gaussian_size(sigma)
    limit = min(img.height, img.width)
    if size > limit:
        size = limit if limit % 2 else limit - 1
    return convolve(img, make_blur_kernel(IsoGaussian(sigma, size)))


def unsharp_mask(img: PlanarImage, sigma: float, amount: float, threshold: float = 0.0) -> PlanarImage:
    """Add ``amount`` times the high-pass residual where it exceeds ``threshold``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if amount < 0 or threshold < 0:
        raise ValueError("amount and threshold must be non-negative")
    if amount == 0:
        return img
    mask = img.data - gaussian_blur(img, sigma).data
    out = img.data + amount * np.where(np.abs(mask) > threshold, mask, 0.0)
    return PlanarImage(np.clip(out, 0.0, 1.0))
