"""Blur-kernel estimation by direct optimization of a linear downscaling model.

The generator is ``G(k) = decimate_s(I_src (*) k)``: correlation with the
kernel followed by stride-``s`` sampling at block centers. ``k`` minimizes

    mean|G(k) - target|  +  alpha_sum * |1 - sum(k)|  +  alpha_mask * |sum(k * m)|

where ``target`` is the ideal bicubic downscale of ``I_src`` (single-image
mode) or an observed LR image (paired mode), and ``m`` grows with distance
from the kernel center. The model is linear in ``k``, so the data-term
subgradient is a correlation of the residual sign with shifted image
windows. Steps are preconditioned by the inverse window Gram matrix, which
removes the strong spatial correlation of natural images from the
conditioning of the problem.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .filters import Kernel2D, convolve, resample
from .imgcore import PlanarImage


class EstimationError(RuntimeError):
    pass


class DivergenceError(EstimationError):
    """The objective rose for too many consecutive iterations."""


class DegenerateImageError(EstimationError, ValueError):
    """The source image is flat; every kernel explains it equally well."""


def center_mask(size: int) -> np.ndarray:
    """Squared distance from the center, normalized so the corners are 1."""
    r = size // 2
    if r == 0:
        return np.zeros((1, 1))
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1].astype(np.float64)
    return (yy * yy + xx * xx) / (2.0 * r * r)


@dataclass
class EstimationProblem:
    source: PlanarImage
    scale: int = 3
    kernel_size: int = 13
    # observed LR image of size (H // scale, W // scale); None means single-image mode
    target: PlanarImage | None = None
    mask: np.ndarray | None = None
    alpha_sum: float = 0.5
    alpha_mask: float = 0.02
    iterations: int = 2000
    step: float = 1e-3
    crop: int = 64
    ridge: float = 1e-3
    eval_pixels: int = 4096
    patience: int = 50
    averaging: float = 0.98
    seed: int = 0

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {self.kernel_size}")
        if self.scale < 2:
            raise ValueError("scale must be >= 2")
        if self.mask is None:
            self.mask = center_mask(self.kernel_size)
        m = np.asarray(self.mask, dtype=np.float64)
        c = self.kernel_size // 2
        if m.shape != (self.kernel_size, self.kernel_size):
            raise ValueError("mask shape must match the kernel size")
        if m[c, c] != 0 or not np.allclose(m, m[::-1, ::-1]):
            raise ValueError("mask must be symmetric with zero at the center")
        self.mask = m
        if self.iterations < 1 or self.step <= 0:
            raise ValueError("iterations and step must be positive")


class KernelEstimate(NamedTuple):
    kernel: Kernel2D
    losses: np.ndarray
    raw_sum: float


def _windows(pad: np.ndarray, size: int, off: int, s: int, y0: int, x0: int, h: int, w: int) -> np.ndarray:
    """(size*size, C*h*w) matrix of shifted, decimated source windows for an LR region."""
    out = np.empty((size * size, pad.shape[0], h, w))
    ys, xs = off + s * y0, off + s * x0
    for a in range(size):
        for b in range(size):
            out[a * size + b] = pad[:, ys + a : ys + a + s * h : s, xs + b : xs + b + s * w : s]
    return out.reshape(size * size, -1)


def _gram(pad: np.ndarray, size: int, off: int, s: int, h: int, w: int) -> np.ndarray:
    g = np.zeros((size * size, size * size))
    rows = max(1, 8192 // max(w, 1))
    for y0 in range(0, h, rows):
        wb = _windows(pad, size, off, s, y0, 0, min(rows, h - y0), w)
        g += wb @ wb.T
    return g / (pad.shape[0] * h * w)


def estimate_kernel(problem: EstimationProblem) -> KernelEstimate:
    p = problem
    src, s, size = p.source, p.scale, p.kernel_size
    r, off = size // 2, s // 2
    h, w = src.height // s, src.width // s
    if p.target is not None:
        if p.target.channels != src.channels:
            raise ValueError("target and source channel counts differ")
        h, w = min(h, p.target.height), min(w, p.target.width)
        target = p.target.data[:, :h, :w]
    else:
        target = resample(src, src.height // s, src.width // s, "bicubic").data[:, :h, :w]
    if h < 2 or w < 2 or size > min(src.height, src.width):
        raise ValueError("source image is too small for this scale and kernel size")
    if float(src.data.var()) < 1e-10:
        raise DegenerateImageError("source image is flat")

    pad = np.pad(src.data, ((0, 0), (r, r), (r, r)), mode="reflect")
    ntap = size * size
    gram = _gram(pad, size, off, s, h, w)
    precond = np.linalg.inv(gram + p.ridge * np.trace(gram) / ntap * np.eye(ntap))

    rng = np.random.default_rng(p.seed)
    ch = max(1, min(p.crop // s, h))
    cw = max(1, min(p.crop // s, w))
    # fixed evaluation sample for a deterministic, comparable loss history
    n_eval = min(p.eval_pixels, h * w)
    flat = rng.choice(h * w, size=n_eval, replace=False)
    ey, ex = np.divmod(flat, w)
    eval_b = np.stack([pad[:, off + s * ey + a, off + s * ex + b] for a in range(size) for b in range(size)])
    eval_b = eval_b.reshape(ntap, -1)
    eval_t = target[:, ey, ex].ravel()
    mask = p.mask.ravel()

    def objective(k):
        data = np.abs(k @ eval_b - eval_t).mean()
        return data + p.alpha_sum * abs(1.0 - k.sum()) + p.alpha_mask * abs(k @ mask)

    k = np.zeros(ntap)
    k[ntap // 2] = 1.0
    k_avg = k.copy()
    losses = np.empty(p.iterations + 1)
    losses[0] = objective(k)
    rising = 0
    for t in range(p.iterations):
        y0, x0 = int(rng.integers(h - ch + 1)), int(rng.integers(w - cw + 1))
        wb = _windows(pad, size, off, s, y0, x0, ch, cw)
        tb = target[:, y0 : y0 + ch, x0 : x0 + cw].ravel()
        res = k @ wb - tb
        grad = wb @ np.sign(res) / res.size
        grad -= p.alpha_sum * np.sign(1.0 - k.sum())
        grad += p.alpha_mask * np.sign(k @ mask) * mask
        k = k - p.step * (1.0 - t / p.iterations) * (precond @ grad)
        k_avg += (1.0 - p.averaging) * (k - k_avg)
        losses[t + 1] = objective(k_avg)
        rising = rising + 1 if losses[t + 1] > losses[t] else 0
        if rising >= p.patience or not np.isfinite(losses[t + 1]):
            raise DivergenceError(f"objective rose for {rising} consecutive iterations at step {t + 1}")
    raw_sum = float(k_avg.sum())
    kern = Kernel2D(k_avg.reshape(size, size)).normalized()
    return KernelEstimate(kern, losses, raw_sum)


def save_loss_history(losses: np.ndarray, path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loss"])
        for i, v in enumerate(losses):
            w.writerow([i, repr(float(v))])


def synthesize_lr(hr: PlanarImage, k: Kernel2D, scale: int) -> PlanarImage:
    """LR image under the estimator's own forward model: blur, then decimate."""
    off = scale // 2
    blurred = convolve(hr, k).data
    h, w = hr.height // scale, hr.width // scale
    return PlanarImage(blurred[:, off : off + scale * h : scale, off : off + scale * w : scale])
