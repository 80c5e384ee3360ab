"""Training loss: weighted L1 + (1 - SSIM) + optional feature distance."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..metrics import SSIM_K1, SSIM_K2, gaussian_window_1d
from . import autograd as ag


@dataclass(frozen=True)
class LossConfig:
    l1: float = 1.0
    ssim: float = 0.3
    feature: float = 0.3
    # maps an NCHW Tensor to a feature Tensor; None disables the feature term
    feature_extractor: Callable[[ag.Tensor], ag.Tensor] | None = None


def ssim_tensor(x: ag.Tensor, y: ag.Tensor, peak: float = 1.0) -> ag.Tensor:
    """Mean SSIM over every (image, channel) map, differentiable in ``x`` and ``y``."""
    g = gaussian_window_1d()
    c1, c2 = (SSIM_K1 * peak) ** 2, (SSIM_K2 * peak) ** 2
    mu_x, mu_y = ag.filter_valid(x, g), ag.filter_valid(y, g)
    mxx, myy, mxy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
    sxx = ag.filter_valid(x * x, g) - mxx
    syy = ag.filter_valid(y * y, g) - myy
    sxy = ag.filter_valid(x * y, g) - mxy
    num = (2.0 * mxy + c1) * (2.0 * sxy + c2)
    den = (mxx + myy + c1) * (sxx + syy + c2)
    return ag.mean(num / den)


def loss_tensor(sr: ag.Tensor, hr, cfg: LossConfig = LossConfig()) -> tuple[ag.Tensor, dict]:
    hr_t = ag.as_tensor(hr)
    if sr.shape != hr_t.shape:
        raise ValueError(f"SR shape {sr.shape} differs from HR shape {hr_t.shape}")
    parts = {}
    l1 = ag.mean(ag.abs_(hr_t - sr))
    total = cfg.l1 * l1
    parts["l1"] = float(l1.data)
    if cfg.ssim:
        s = ssim_tensor(sr, hr_t)
        total = total + cfg.ssim * (1.0 - s)
        parts["ssim"] = float(s.data)
    if cfg.feature and cfg.feature_extractor is not None:
        fd = ag.mean(ag.abs_(cfg.feature_extractor(hr_t) - cfg.feature_extractor(sr)))
        total = total + cfg.feature * fd
        parts["feature"] = float(fd.data)
    else:
        parts["feature"] = 0.0
    parts["total"] = float(total.data)
    return total, parts


def compute_loss(sr, hr, l1: float = 1.0, ssim: float = 0.3, feature: float = 0.3,
                 feat: Callable | None = None) -> tuple[float, dict]:
    """Scalar loss and its components for numpy ``(N, C, H, W)`` arrays."""
    total, parts = loss_tensor(ag.as_tensor(np.asarray(sr)), np.asarray(hr), LossConfig(l1, ssim, feature, feat))
    return float(total.data), parts
