"""Planar float images, color conversion and file I/O.

Images live in memory as ``PlanarImage``: a read-only ``(C, H, W)`` float64
array with nominal range [0, 1]. 8-bit samples only appear at the file
boundary (PNG via Pillow, binary PPM/PGM parsed here).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError


class ImageError(Exception):
    """Base class for image I/O failures."""


class ImageReadError(ImageError):
    """The file is missing or cannot be read."""


class UnsupportedFormatError(ImageError):
    """The file is readable but not a supported format or sample depth."""


class CorruptHeaderError(ImageError):
    """The header is malformed or does not match the payload."""


@dataclass(frozen=True, eq=False)
class PlanarImage:
    """Channel-planar float image, ``data.shape == (channels, height, width)``."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or arr.shape[0] not in (1, 3):
            raise ValueError(f"expected (1|3, H, W) data, got shape {arr.shape}")
        if arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ValueError("image must have at least one pixel")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image data contains NaN or Inf")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def to_u8(self) -> "ImageU8":
        return ImageU8.from_planar(self)

    def __repr__(self):
        return f"PlanarImage(channels={self.channels}, height={self.height}, width={self.width})"


@dataclass(frozen=True, eq=False)
class ImageU8:
    """Interleaved 8-bit image, ``data.shape == (height, width, channels)``."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.dtype != np.uint8:
            raise ValueError(f"expected uint8 samples, got {arr.dtype}")
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"expected (H, W, 1|3) samples, got shape {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @classmethod
    def from_planar(cls, img: PlanarImage) -> "ImageU8":
        q = np.floor(np.clip(img.data, 0.0, 1.0) * 255.0 + 0.5)
        return cls(np.ascontiguousarray(q.transpose(1, 2, 0)).astype(np.uint8))

    def to_planar(self) -> PlanarImage:
        return PlanarImage(self.data.transpose(2, 0, 1).astype(np.float64) / 255.0)


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise CorruptHeaderError("truncated PNM header")
    return buf[start:pos], pos


def _parse_pnm(buf: bytes) -> ImageU8:
    magic = buf[:2]
    channels = {b"P5": 1, b"P6": 3}[magic]
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise CorruptHeaderError(f"non-numeric PNM header field {tok!r}") from None
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise CorruptHeaderError(f"invalid PNM dimensions {width}x{height}")
    if not 0 < maxval < 65536:
        raise CorruptHeaderError(f"invalid PNM maxval {maxval}")
    if maxval > 255:
        raise UnsupportedFormatError("16-bit PNM is not supported")
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise CorruptHeaderError("missing whitespace after PNM header")
    pos += 1
    count = width * height * channels
    raster = buf[pos : pos + count]
    if len(raster) != count:
        raise CorruptHeaderError(f"PNM raster has {len(raster)} bytes, expected {count}")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    if maxval != 255:
        arr = np.floor(arr.astype(np.float64) * 255.0 / maxval + 0.5).astype(np.uint8)
    return ImageU8(arr.copy())


def _read_png(path: str) -> ImageU8:
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise UnsupportedFormatError(f"{path}: unsupported format {im.format}")
            if im.info.get("interlace"):
                raise UnsupportedFormatError(f"{path}: interlaced PNG is not supported")
            if im.mode in ("I;16", "I;16B", "I", "F"):
                raise UnsupportedFormatError(f"{path}: only 8-bit PNG is supported (mode {im.mode})")
            if im.mode in ("L", "LA", "1"):
                im = im.convert("L")
            else:
                im = im.convert("RGB")
            return ImageU8(np.asarray(im, dtype=np.uint8).copy())
    except (UnidentifiedImageError, SyntaxError) as exc:
        raise CorruptHeaderError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise CorruptHeaderError(f"{path}: {exc}") from exc


def load_u8(path: str | os.PathLike) -> ImageU8:
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            head = fh.read(8)
    except OSError as exc:
        raise ImageReadError(f"cannot read {path}: {exc}") from exc
    if head.startswith(b"\x89PNG\r\n\x1a\n"):
        return _read_png(path)
    if head[:2] in (b"P5", b"P6"):
        with open(path, "rb") as fh:
            return _parse_pnm(fh.read())
    raise UnsupportedFormatError(f"{path}: not a PNG or binary PPM/PGM file")


def load_image(path: str | os.PathLike) -> PlanarImage:
    """Load a PNG or binary PPM/PGM file into a [0, 1] planar image."""
    return load_u8(path).to_planar()


def save_image(img: PlanarImage, path: str | os.PathLike) -> None:
    """Clamp to [0, 1], quantize by ``round(v * 255)`` and write.

    The format follows the extension: ``.ppm``/``.pgm``/``.pnm`` write
    binary PNM, anything else writes PNG.
    """
    path = os.fspath(path)
    u8 = img.to_u8()
    ext = os.path.splitext(path)[1].lower()
    try:
        if ext in (".ppm", ".pgm", ".pnm"):
            magic = b"P5" if u8.channels == 1 else b"P6"
            header = magic + b"\n%d %d\n255\n" % (u8.width, u8.height)
            with open(path, "wb") as fh:
                fh.write(header + u8.data.tobytes())
        else:
            arr = u8.data[:, :, 0] if u8.channels == 1 else u8.data
            Image.fromarray(arr, mode="L" if u8.channels == 1 else "RGB").save(path, format="PNG")
    except OSError as exc:
        raise ImageError(f"cannot write {path}: {exc}") from exc


def rgb_to_y(img: PlanarImage) -> PlanarImage:
    """Studio-swing BT.601 luma, as used for Y-channel PSNR in SR benchmarks."""
    if img.channels != 3:
        raise ValueError(f"rgb_to_y needs a 3-channel image, got {img.channels}")
    r, g, b = img.data
    return PlanarImage((16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0)


def shave_border(img: PlanarImage, n: int) -> PlanarImage:
    if n < 0:
        raise ValueError("shave width must be non-negative")
    if 2 * n >= min(img.height, img.width):
        raise ValueError(f"cannot shave {n} px from a {img.height}x{img.width} image")
    if n == 0:
        return img
    return PlanarImage(img.data[:, n:-n, n:-n])
