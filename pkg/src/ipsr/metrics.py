"""PSNR / SSIM under the usual SR evaluation protocol."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .imgcore import ImageError, PlanarImage, load_image, rgb_to_y, shave_border

log = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


@dataclass(frozen=True)
class EvalProtocol:
    mode: Literal["rgb", "y"] = "y"
    shave: int = 3
    peak: float = 1.0

    def __post_init__(self):
        if self.mode not in ("rgb", "y"):
            raise ValueError(f"unknown channel mode {self.mode!r}")
        if self.shave < 0:
            raise ValueError("shave must be non-negative")

    @classmethod
    def for_mode(cls, mode: str, scale: int = 3) -> "EvalProtocol":
        # y-mode benchmarks shave `scale` px; DIV2K-style RGB evaluation shaves none
        return cls(mode=mode, shave=scale if mode == "y" else 0)


def gaussian_window_1d(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    t = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(t * t) / (2 * sigma * sigma))
    return g / g.sum()


def filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation of the last two axes with 1D taps ``g``."""
    n = g.size
    h, w = x.shape[-2] - n + 1, x.shape[-1] - n + 1
    rows = sum(g[i] * x[..., i : i + h, :] for i in range(n))
    return sum(g[j] * rows[..., :, j : j + w] for j in range(n))


def _prepare(a: PlanarImage, b: PlanarImage, proto: EvalProtocol) -> tuple[np.ndarray, np.ndarray]:
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if proto.mode == "y" and a.channels == 3:
        a, b = rgb_to_y(a), rgb_to_y(b)
    a, b = shave_border(a, proto.shave), shave_border(b, proto.shave)
    return a.data, b.data


def psnr(a: PlanarImage, b: PlanarImage, proto: EvalProtocol = EvalProtocol()) -> float:
    """PSNR in dB; identical inputs give ``math.inf``."""
    x, y = _prepare(a, b, proto)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(proto.peak**2 / mse)


def ssim_map(x: np.ndarray, y: np.ndarray, peak: float = 1.0) -> np.ndarray:
    g = gaussian_window_1d()
    c1, c2 = (SSIM_K1 * peak) ** 2, (SSIM_K2 * peak) ** 2
    mu_x, mu_y = filter_valid(x, g), filter_valid(y, g)
    sxx = filter_valid(x * x, g) - mu_x * mu_x
    syy = filter_valid(y * y, g) - mu_y * mu_y
    sxy = filter_valid(x * y, g) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return num / den


def ssim(a: PlanarImage, b: PlanarImage, proto: EvalProtocol = EvalProtocol()) -> float:
    """Mean local SSIM (11x11 Gaussian window, sigma 1.5), averaged over channels."""
    x, y = _prepare(a, b, proto)
    if min(x.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    return float(np.mean(ssim_map(x, y, proto.peak)))


@dataclass
class EvalRow:
    name: str
    psnr_db: float
    ssim: float


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    unmatched: list[str] = field(default_factory=list)
    failed: list[str] = field(default_factory=list)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r.psnr_db for r in self.rows])) if self.rows else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r.ssim for r in self.rows])) if self.rows else math.nan

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "psnr_db", "ssim"])
        for r in self.rows:
            w.writerow([r.name, _fmt(r.psnr_db), _fmt(r.ssim)])
        if self.rows:
            w.writerow(["mean", _fmt(self.mean_psnr), _fmt(self.mean_ssim)])
        return buf.getvalue()

    def to_table(self) -> str:
        width = max([len(r.name) for r in self.rows] + [4])
        lines = [f"{'name':<{width}}  {'PSNR (dB)':>10}  {'SSIM':>8}"]
        for r in self.rows:
            lines.append(f"{r.name:<{width}}  {r.psnr_db:>10.4f}  {r.ssim:>8.5f}")
        lines.append(f"{'mean':<{width}}  {self.mean_psnr:>10.4f}  {self.mean_ssim:>8.5f}")
        for name in self.unmatched:
            lines.append(f"unmatched: {name}")
        for name in self.failed:
            lines.append(f"failed: {name}")
        return "\n".join(lines)


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))


def read_report_csv(text: str) -> dict[str, tuple[float, float]]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return {r["name"]: (float(r["psnr_db"]), float(r["ssim"])) for r in rows}


_IMAGE_EXTS = (".png", ".ppm", ".pgm", ".pnm")


def _list_images(d: str) -> set[str]:
    return {f for f in os.listdir(d) if f.lower().endswith(_IMAGE_EXTS)}


def evaluate_pairs(sr_dir: str | os.PathLike, hr_dir: str | os.PathLike,
                   proto: EvalProtocol = EvalProtocol(), jobs: int = 1) -> EvalReport:
    """Score every filename present in both directories.

    Files found in only one directory are listed in ``unmatched``; unreadable
    or mis-sized pairs go to ``failed``. Neither stops the run.
    """
    sr_names, hr_names = _list_images(os.fspath(sr_dir)), _list_images(os.fspath(hr_dir))
    common = sorted(sr_names & hr_names)
    report = EvalReport(unmatched=sorted(sr_names ^ hr_names))

    def score(name):
        try:
            sr = load_image(os.path.join(sr_dir, name))
            hr = load_image(os.path.join(hr_dir, name))
            return EvalRow(name, psnr(sr, hr, proto), ssim(sr, hr, proto))
        except (ImageError, ValueError) as exc:
            log.warning("skipping %s: %s", name, exc)
            return name

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        for res in pool.map(score, common):
            if isinstance(res, EvalRow):
                report.rows.append(res)
            else:
                report.failed.append(res)
    return report
