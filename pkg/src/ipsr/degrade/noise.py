"""Synthetic noise and real-noise patch harvesting/injection."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from ..imgcore import PlanarImage

BANK_MAGIC = b"NPB1"
DEFAULT_PATCH_SIZE = 64
DEFAULT_STRIDE = 32
DEFAULT_VARIANCE_CAP = 0.002


class EmptyBankError(ValueError):
    """No patch passed the variance gate; raise the cap or use flatter images."""


@dataclass(frozen=True)
class GaussianNoise:
    sigma: float
    gray: bool = False

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"gaussian sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class PoissonNoise:
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"poisson scale must be > 0, got {self.scale}")


@dataclass(frozen=True)
class PatchNoise:
    bank_id: str = "default"


NoiseSpec = Union[GaussianNoise, PoissonNoise, PatchNoise]


def add_noise(img: PlanarImage, spec: NoiseSpec, rng: np.random.Generator) -> PlanarImage:
    """Add Gaussian or Poisson noise. The result is not clamped."""
    if isinstance(spec, GaussianNoise):
        if spec.sigma == 0:
            return img
        if spec.gray:
            n = rng.normal(0.0, spec.sigma, size=(1, img.height, img.width))
        else:
            n = rng.normal(0.0, spec.sigma, size=img.shape)
        return PlanarImage(img.data + n)
    if isinstance(spec, PoissonNoise):
        lam = np.clip(img.data, 0.0, None) * spec.scale
        return PlanarImage(rng.poisson(lam) / spec.scale)
    if isinstance(spec, PatchNoise):
        raise TypeError("patch noise needs a NoisePatchBank; use inject_noise_patch")
    raise TypeError(f"unknown noise spec {spec!r}")


class NoisePatchBank:
    """Zero-mean residual patches whose per-channel variance is below ``variance_cap``."""

    def __init__(self, patches: np.ndarray, variance_cap: float):
        patches = np.asarray(patches, dtype=np.float64)
        if patches.ndim != 4 or patches.shape[2] != patches.shape[3]:
            raise ValueError(f"patches must be (count, C, p, p), got {patches.shape}")
        if variance_cap <= 0:
            raise ValueError("variance cap must be positive")
        var = patches.var(axis=(2, 3))
        if np.any(var >= variance_cap):
            raise ValueError("patch exceeds the bank variance cap")
        if np.any(np.abs(patches.mean(axis=(2, 3))) > 1e-6):
            raise ValueError("bank patches must be zero-mean per channel")
        patches.flags.writeable = False
        self.patches = patches
        self.variance_cap = float(variance_cap)

    @property
    def patch_size(self) -> int:
        return self.patches.shape[2]

    @property
    def channels(self) -> int:
        return self.patches.shape[1]

    def __len__(self):
        return self.patches.shape[0]

    def save(self, path: str | os.PathLike) -> None:
        # magic, patch_size, count, channels (u32), variance cap (f32), then f32 patch data
        header = BANK_MAGIC + struct.pack("<IIIf", self.patch_size, len(self), self.channels, self.variance_cap)
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(self.patches.astype("<f4").tobytes())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "NoisePatchBank":
        with open(path, "rb") as fh:
            buf = fh.read()
        if buf[:4] != BANK_MAGIC:
            raise ValueError(f"{path}: not a noise patch bank")
        if len(buf) < 20:
            raise ValueError(f"{path}: truncated header")
        size, count, channels, cap = struct.unpack("<IIIf", buf[4:20])
        n = count * channels * size * size
        raw = np.frombuffer(buf, dtype="<f4", offset=20)
        if raw.size != n:
            raise ValueError(f"{path}: expected {n} floats, found {raw.size}")
        patches = raw.astype(np.float64).reshape(count, channels, size, size)
        # f32 storage perturbs the mean slightly; re-center before re-checking the gate
        patches = patches - patches.mean(axis=(2, 3), keepdims=True)
        return cls(patches, float(cap))


def collect_noise_patches(lr_images: Sequence[PlanarImage], patch_size: int = DEFAULT_PATCH_SIZE,
                          stride: int = DEFAULT_STRIDE,
                          v: float = DEFAULT_VARIANCE_CAP) -> NoisePatchBank:
    """Harvest flat-region residuals from real LR images.

    A window slides with ``stride``; patches whose variance is below ``v`` in
    every channel are kept minus their per-channel mean.
    """
    if v <= 0:
        raise ValueError("variance cap must be positive")
    if patch_size < 1 or stride < 1:
        raise ValueError("patch size and stride must be positive")
    kept = []
    channels = None
    for img in lr_images:
        if patch_size > min(img.height, img.width):
            raise ValueError(f"patch size {patch_size} exceeds image {img.height}x{img.width}")
        if channels is None:
            channels = img.channels
        elif img.channels != channels:
            raise ValueError("all images must have the same channel count")
        for y in range(0, img.height - patch_size + 1, stride):
            for x in range(0, img.width - patch_size + 1, stride):
                p = img.data[:, y : y + patch_size, x : x + patch_size]
                if np.all(p.var(axis=(1, 2)) < v):
                    res = p - p.mean(axis=(1, 2), keepdims=True)
                    # a constant channel's float mean can be off by an ulp; store it as exactly 0
                    res[np.ptp(p, axis=(1, 2)) == 0] = 0.0
                    kept.append(res)
    if not kept:
        raise EmptyBankError(f"no {patch_size}px patch has variance below {v}")
    return NoisePatchBank(np.stack(kept), v)


def inject_noise_patch(img: PlanarImage, bank: NoisePatchBank, rng: np.random.Generator) -> PlanarImage:
    """Tile randomly drawn, randomly flipped bank patches over ``img`` and add them."""
    if len(bank) == 0:
        raise EmptyBankError("noise patch bank is empty")
    if bank.channels not in (1, img.channels):
        raise ValueError(f"bank has {bank.channels} channels, image has {img.channels}")
    p = bank.patch_size
    noise = np.zeros(img.shape)
    for y in range(0, img.height, p):
        for x in range(0, img.width, p):
            patch = bank.patches[rng.integers(len(bank))]
            if rng.random() < 0.5:
                patch = patch[:, :, ::-1]
            if rng.random() < 0.5:
                patch = patch[:, ::-1, :]
            h, w = min(p, img.height - y), min(p, img.width - x)
            noise[:, y : y + h, x : x + w] = patch[:, :h, :w]
    return PlanarImage(img.data + noise)
