"""LR/HR training-pair generation over a directory of HR images."""

from __future__ import annotations

import logging
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..filters import unsharp_mask
from ..imgcore import ImageError, PlanarImage, load_image, save_image
from .pipeline import DegradationConfig, Resources, degrade_pipeline

log = logging.getLogger(__name__)

_HR_EXTS = (".png", ".ppm", ".pgm", ".pnm")


@dataclass
class DatasetSummary:
    images: int = 0
    hr_written: int = 0
    lr_written: int = 0
    traces_written: int = 0
    real_pairs: int = 0
    failures: list = field(default_factory=list)


def pair_seed(seed: int, image_index: int, copy_index: int) -> int:
    """Independent 64-bit seed per (image, copy) so worker count never changes outputs."""
    ss = np.random.SeedSequence([int(seed), int(image_index), int(copy_index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def modcrop(img: PlanarImage, scale: int) -> PlanarImage:
    h, w = img.height - img.height % scale, img.width - img.width % scale
    if h == img.height and w == img.width:
        return img
    return PlanarImage(img.data[:, :h, :w])


def generate_dataset(hr_dir: str | os.PathLike, out_dir: str | os.PathLike, cfg: DegradationConfig,
                     count: int = 1, jobs: int = 1, resources: Resources | None = None) -> DatasetSummary:
    """Write ``{name}_hr.png``, ``{name}_{k}_lr.png`` and ``{name}_{k}.trace`` per HR image.

    HR images are cropped to a multiple of the scale; the saved HR copy is
    sharpened when ``cfg.gt_sharpen`` is set (the degradation input is not).
    """
    hr_dir, out_dir = os.fspath(hr_dir), os.fspath(out_dir)
    if count < 1:
        raise ValueError("count must be at least 1")
    names = sorted(f for f in os.listdir(hr_dir) if f.lower().endswith(_HR_EXTS))
    if not names:
        raise ValueError(f"no HR images found in {hr_dir}")
    os.makedirs(out_dir, exist_ok=True)
    res = resources if resources is not None else Resources.from_config(cfg)

    def work(item):
        idx, fname = item
        stem = os.path.splitext(fname)[0]
        out = {"hr": 0, "lr": 0, "trace": 0, "real": 0, "failures": []}
        try:
            hr = modcrop(load_image(os.path.join(hr_dir, fname)), cfg.scale)
        except (ImageError, ValueError) as exc:
            log.warning("cannot load %s: %s", fname, exc)
            out["failures"].append((fname, str(exc)))
            return out
        try:
            target = hr
            if cfg.gt_sharpen is not None:
                g = cfg.gt_sharpen
                target = unsharp_mask(hr, g.sigma, g.amount, g.threshold)
            save_image(target, os.path.join(out_dir, f"{stem}_hr.png"))
            out["hr"] += 1
            for k in range(count):
                lr, trace = degrade_pipeline(hr, cfg, pair_seed(cfg.seed, idx, k), res)
                save_image(lr, os.path.join(out_dir, f"{stem}_{k}_lr.png"))
                trace.save(os.path.join(out_dir, f"{stem}_{k}.trace"))
                out["lr"] += 1
                out["trace"] += 1
            if cfg.paired_lr_dir:
                real = os.path.join(cfg.paired_lr_dir, fname)
                if os.path.exists(real):
                    shutil.copyfile(real, os.path.join(out_dir, f"{stem}_real_lr{os.path.splitext(fname)[1]}"))
                    out["real"] += 1
        except (ImageError, ValueError, OSError) as exc:
            log.warning("failed on %s: %s", fname, exc)
            out["failures"].append((fname, str(exc)))
        log.info("%s: %d LR copies", fname, out["lr"])
        return out

    summary = DatasetSummary(images=len(names))
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        for out in pool.map(work, enumerate(names)):
            summary.hr_written += out["hr"]
            summary.lr_written += out["lr"]
            summary.traces_written += out["trace"]
            summary.real_pairs += out["real"]
            summary.failures.extend(out["failures"])
    return summary
