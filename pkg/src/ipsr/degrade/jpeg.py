"""JPEG artifact simulation by DCT quantization round-trip.

Entropy coding is lossless and therefore skipped; what remains is color
conversion, 4:2:0 chroma subsampling and 8x8 block quantization.
"""

from __future__ import annotations

import numpy as np
from scipy.fft import dctn, idctn

from ..filters import resample_array
from ..imgcore import PlanarImage

# ITU-T T.81 Annex K, natural (row-major) order
LUMA_BASE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.int64)

CHROMA_BASE = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=np.int64)


def quality_scale(quality: int) -> int:
    """libjpeg's percentage scaling; quality 0 is treated as 1, like libjpeg."""
    q = max(int(quality), 1)
    return 5000 // q if q < 50 else 200 - 2 * q


def scaled_table(base: np.ndarray, quality: int) -> np.ndarray:
    scale = quality_scale(quality)
    return np.clip((base * scale + 50) // 100, 1, 255)


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def rgb_to_ycbcr_full(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0
    return np.stack([y, cb, cr])


def ycbcr_full_to_rgb(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = ycc[0], ycc[1] - 128.0, ycc[2] - 128.0
    return np.stack([y + 1.402 * cr, y - 0.344136 * cb - 0.714136 * cr, y + 1.772 * cb])


def _pad_to(plane: np.ndarray, mh: int, mw: int) -> np.ndarray:
    h, w = plane.shape
    return np.pad(plane, ((0, (-h) % mh), (0, (-w) % mw)), mode="edge")


def _block_roundtrip(plane: np.ndarray, table: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    p = _pad_to(plane - 128.0, 8, 8)
    ph, pw = p.shape
    blocks = p.reshape(ph // 8, 8, pw // 8, 8).transpose(0, 2, 1, 3)
    coef = dctn(blocks, axes=(2, 3), norm="ortho")
    coef = round_half_away(coef / table) * table
    rec = idctn(coef, axes=(2, 3), norm="ortho")
    return rec.transpose(0, 2, 1, 3).reshape(ph, pw)[:h, :w] + 128.0


def jpeg_simulate(img: PlanarImage, quality: int) -> PlanarImage:
    """Approximate the pixel damage of baseline JPEG at ``quality`` (0..100)."""
    if img.channels != 3:
        raise ValueError("jpeg_simulate needs a 3-channel image")
    if not 0 <= int(quality) <= 100 or int(quality) != quality:
        raise ValueError(f"JPEG quality must be an integer in [0, 100], got {quality}")
    luma_q, chroma_q = scaled_table(LUMA_BASE, quality), scaled_table(CHROMA_BASE, quality)
    h, w = img.height, img.width
    ycc = rgb_to_ycbcr_full(img.data * 255.0)

    y = _block_roundtrip(ycc[0], luma_q)
    chroma = []
    for plane in ycc[1:]:
        p = _pad_to(plane, 2, 2)
        sub = p.reshape(p.shape[0] // 2, 2, p.shape[1] // 2, 2).mean(axis=(1, 3))
        sub = _block_roundtrip(sub, chroma_q)
        up = resample_array(sub, 2 * sub.shape[0], 2 * sub.shape[1], "bilinear")
        chroma.append(up[:h, :w])
    rgb = ycbcr_full_to_rgb(np.stack([y, *chroma]))
    return PlanarImage(np.clip(rgb, 0.0, 255.0) / 255.0)
