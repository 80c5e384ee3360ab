"""Randomized blur / downsample / noise / JPEG degradation with replayable traces."""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Mapping, Sequence

import numpy as np

from ..filters import (
    RESAMPLE_METHODS,
    AnisoGaussian,
    IsoGaussian,
    Kernel2D,
    Sinc,
    convolve,
    default_gaussian_size,
    load_kernel,
    make_blur_kernel,
    resample,
)
from ..imgcore import PlanarImage
from .jpeg import jpeg_simulate
from .noise import GaussianNoise, NoisePatchBank, PoissonNoise, add_noise, inject_noise_patch

STAGES = ("blur", "downsample", "noise", "jpeg")


@dataclass
class BlurConfig:
    prob: float = 1.0
    weights: dict = field(default_factory=lambda: {"iso": 0.4, "aniso": 0.4, "sinc": 0.2, "file": 0.0})
    sigma_range: tuple = (0.2, 3.0)
    sinc_cutoff_range: tuple = (math.pi / 3, math.pi)
    sinc_size_range: tuple = (7, 21)
    # estimated kernels (text-grid files) drawn when weights["file"] > 0
    kernel_files: list = field(default_factory=list)


@dataclass
class NoiseConfig:
    prob: float = 1.0
    weights: dict = field(default_factory=lambda: {"gaussian": 0.5, "poisson": 0.5, "patch": 0.0})
    gaussian_sigma_range: tuple = (0.0, 0.06)
    gray_prob: float = 0.4
    poisson_scale_range: tuple = (50.0, 2000.0)
    bank_path: str | None = None


@dataclass
class DownsampleConfig:
    prob: float = 1.0
    weights: dict = field(default_factory=lambda: {"area": 1.0, "bilinear": 1.0, "bicubic": 1.0, "nearest": 0.0})


@dataclass
class JpegConfig:
    prob: float = 1.0
    quality_range: tuple = (30, 95)


@dataclass
class SharpenConfig:
    sigma: float = 1.0
    amount: float = 0.5
    threshold: float = 0.0


@dataclass
class DegradationConfig:
    scale: int = 3
    shuffle: bool = True
    seed: int = 0
    blur: BlurConfig = field(default_factory=BlurConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    downsample: DownsampleConfig = field(default_factory=DownsampleConfig)
    jpeg: JpegConfig = field(default_factory=JpegConfig)
    gt_sharpen: SharpenConfig | None = None
    # directory of real LR images named like the HR files, passed through as extra pairs
    paired_lr_dir: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if int(self.scale) != self.scale or self.scale < 2:
            raise ValueError(f"scale must be an integer >= 2, got {self.scale}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        for name in STAGES:
            p = getattr(self, name).prob
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}.prob must lie in [0, 1], got {p}")
        q_lo, q_hi = self.jpeg.quality_range
        if not 0 <= q_lo <= q_hi <= 100:
            raise ValueError(f"JPEG quality range must satisfy 0 <= lo <= hi <= 100, got {self.jpeg.quality_range}")
        lo, hi = self.blur.sigma_range
        if not 0 < lo <= hi:
            raise ValueError("blur sigma range must be positive and ordered")
        lo, hi = self.blur.sinc_cutoff_range
        if not 0 < lo <= hi <= math.pi:
            raise ValueError("sinc cutoff range must lie in (0, pi]")
        lo, hi = self.noise.gaussian_sigma_range
        if not 0 <= lo <= hi:
            raise ValueError("gaussian sigma range must be non-negative and ordered")
        lo, hi = self.noise.poisson_scale_range
        if not 0 < lo <= hi:
            raise ValueError("poisson scale range must be positive and ordered")
        for section, allowed in ((self.blur, ("iso", "aniso", "sinc", "file")),
                                 (self.noise, ("gaussian", "poisson", "patch")),
                                 (self.downsample, RESAMPLE_METHODS)):
            unknown = set(section.weights) - set(allowed)
            if unknown:
                raise ValueError(f"unknown choice(s) {sorted(unknown)}; allowed: {list(allowed)}")
            if any(w < 0 for w in section.weights.values()) or sum(section.weights.values()) <= 0:
                raise ValueError("choice weights must be non-negative with a positive sum")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "DegradationConfig":
        sections = {"blur": BlurConfig, "noise": NoiseConfig, "downsample": DownsampleConfig,
                    "jpeg": JpegConfig, "gt_sharpen": SharpenConfig}
        kwargs = {}
        known = {f.name for f in fields(cls)}
        for key, value in d.items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            if key in sections and value is not None:
                sub = sections[key]
                sub_known = {f.name for f in fields(sub)}
                bad = set(value) - sub_known
                if bad:
                    raise ValueError(f"unknown key(s) {sorted(bad)} in section {key!r}")
                base = asdict(sub())
                if "weights" in base and "weights" in value:
                    # a weights table given in the file replaces the default table
                    base["weights"] = {}
                base.update({k: (tuple(v) if isinstance(v, list) and k.endswith("_range") else v)
                             for k, v in value.items()})
                value = sub(**base)
            kwargs[key] = value
        return cls(**kwargs)


@dataclass
class PipelineTrace:
    seed: int
    scale: int
    stages: list = field(default_factory=list)

    @property
    def order(self) -> list[str]:
        return [name for name, _ in self.stages]

    def to_text(self) -> str:
        lines = [f"seed={self.seed} scale={self.scale}"]
        for name, params in self.stages:
            body = ",".join(f"{k}={_fmt_value(v)}" for k, v in params.items())
            lines.append(f"stage={name} params={body}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PipelineTrace":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty trace")
        head = dict(tok.split("=", 1) for tok in lines[0].split())
        trace = cls(seed=int(head["seed"]), scale=int(head["scale"]))
        for ln in lines[1:]:
            name_tok, _, params_tok = ln.partition(" ")
            if not name_tok.startswith("stage=") or not params_tok.startswith("params="):
                raise ValueError(f"malformed trace line {ln!r}")
            body = params_tok[len("params="):]
            params = {}
            if body:
                for item in body.split(","):
                    k, v = item.split("=", 1)
                    params[k] = _parse_value(v)
            trace.stages.append((name_tok[len("stage="):], params))
        return trace

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "PipelineTrace":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(s: str):
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    return s


@dataclass
class Resources:
    """External inputs some stages need: estimated kernels and a noise bank."""

    kernels: Sequence[Kernel2D] = ()
    bank: NoisePatchBank | None = None

    @classmethod
    def from_config(cls, cfg: DegradationConfig) -> "Resources":
        kernels = [load_kernel(p) for p in cfg.blur.kernel_files]
        bank = NoisePatchBank.load(cfg.noise.bank_path) if cfg.noise.bank_path else None
        return cls(kernels, bank)


def _choose(rng: np.random.Generator, weights: Mapping[str, float]) -> str:
    names = sorted(k for k, w in weights.items() if w > 0)
    p = np.array([weights[k] for k in names], dtype=np.float64)
    return names[int(rng.choice(len(names), p=p / p.sum()))]


def _sample_blur(rng, cfg: BlurConfig, res: Resources) -> dict:
    kind = _choose(rng, cfg.weights)
    lo, hi = cfg.sigma_range
    if kind == "iso":
        s = float(rng.uniform(lo, hi))
        return {"kind": "iso", "sigma": s, "size": default_gaussian_size(s)}
    if kind == "aniso":
        sx, sy = float(rng.uniform(lo, hi)), float(rng.uniform(lo, hi))
        theta = float(rng.uniform(0.0, math.pi))
        return {"kind": "aniso", "sigma_x": sx, "sigma_y": sy, "theta": theta,
                "size": default_gaussian_size(max(sx, sy))}
    if kind == "sinc":
        sizes = [s for s in range(cfg.sinc_size_range[0], cfg.sinc_size_range[1] + 1) if s % 2 == 1]
        return {"kind": "sinc", "cutoff": float(rng.uniform(*cfg.sinc_cutoff_range)),
                "size": int(sizes[rng.integers(len(sizes))])}
    if not res.kernels:
        raise ValueError("blur weights select estimated kernels but none were loaded")
    return {"kind": "file", "index": int(rng.integers(len(res.kernels)))}


def _sample_noise(rng, cfg: NoiseConfig, res: Resources) -> dict:
    kind = _choose(rng, cfg.weights)
    seed = int(rng.integers(2**63))
    if kind == "gaussian":
        return {"kind": "gaussian", "sigma": float(rng.uniform(*cfg.gaussian_sigma_range)),
                "gray": bool(rng.random() < cfg.gray_prob), "seed": seed}
    if kind == "poisson":
        lo, hi = cfg.poisson_scale_range
        return {"kind": "poisson", "scale": float(math.exp(rng.uniform(math.log(lo), math.log(hi)))), "seed": seed}
    if res.bank is None:
        raise ValueError("noise weights select patch injection but no noise bank was loaded")
    return {"kind": "patch", "seed": seed}


def apply_stage(name: str, params: Mapping[str, Any], img: PlanarImage, res: Resources) -> PlanarImage:
    """Run one stage with fully specified parameters (shared by sampling and replay)."""
    if name == "blur":
        kind = params["kind"]
        if kind == "iso":
            k = make_blur_kernel(IsoGaussian(params["sigma"], params["size"]))
        elif kind == "aniso":
            k = make_blur_kernel(AnisoGaussian(params["sigma_x"], params["sigma_y"], params["theta"], params["size"]))
        elif kind == "sinc":
            k = make_blur_kernel(Sinc(params["cutoff"], params["size"]))
        elif kind == "file":
            k = res.kernels[params["index"]]
        else:
            raise ValueError(f"unknown blur kind {kind!r}")
        if k.size > min(img.height, img.width):
            return img
        return convolve(img, k)
    if name in ("downsample", "resize"):
        return resample(img, params["out_h"], params["out_w"], params["method"])
    if name == "noise":
        rng = np.random.default_rng(params["seed"])
        kind = params["kind"]
        if kind == "gaussian":
            return add_noise(img, GaussianNoise(params["sigma"], bool(params["gray"])), rng)
        if kind == "poisson":
            return add_noise(img, PoissonNoise(params["scale"]), rng)
        if kind == "patch":
            if res.bank is None:
                raise ValueError("trace needs a noise bank")
            return inject_noise_patch(img, res.bank, rng)
        raise ValueError(f"unknown noise kind {kind!r}")
    if name == "jpeg":
        return jpeg_simulate(img, params["quality"])
    raise ValueError(f"unknown stage {name!r}")


def degrade_pipeline(hr: PlanarImage, cfg: DegradationConfig, rng: np.random.Generator | int | None = None,
                     resources: Resources | None = None) -> tuple[PlanarImage, PipelineTrace]:
    """Degrade ``hr`` into an LR image of exactly ``(H/scale, W/scale)``.

    ``rng`` may be a Generator or an integer seed; ``None`` uses ``cfg.seed``.
    """
    s = cfg.scale
    if hr.height % s or hr.width % s:
        raise ValueError(f"HR size {hr.height}x{hr.width} is not divisible by scale {s}")
    if rng is None:
        rng = cfg.seed
    seed = int(rng) if not isinstance(rng, np.random.Generator) else int(cfg.seed)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(seed)
    res = resources or Resources()
    out_h, out_w = hr.height // s, hr.width // s

    order = [STAGES[i] for i in rng.permutation(len(STAGES))] if cfg.shuffle else ["blur", "downsample", "noise", "jpeg"]
    trace = PipelineTrace(seed=seed, scale=s)
    img = hr
    for name in order:
        section = getattr(cfg, name)
        if not rng.random() < section.prob:
            continue
        if name == "blur":
            params = _sample_blur(rng, section, res)
        elif name == "downsample":
            params = {"method": _choose(rng, section.weights), "out_h": out_h, "out_w": out_w}
        elif name == "noise":
            params = _sample_noise(rng, section, res)
        else:
            if img.channels != 3:
                continue
            q_lo, q_hi = section.quality_range
            params = {"quality": int(rng.integers(q_lo, q_hi + 1))}
        img = apply_stage(name, params, img, res)
        trace.stages.append((name, params))
    if (img.height, img.width) != (out_h, out_w):
        params = {"method": "bicubic", "out_h": out_h, "out_w": out_w}
        img = apply_stage("resize", params, img, res)
        trace.stages.append(("resize", params))
    return img, trace


def replay_trace(hr: PlanarImage, trace: PipelineTrace, resources: Resources | None = None) -> PlanarImage:
    res = resources or Resources()
    img = hr
    for name, params in trace.stages:
        img = apply_stage(name, params, img, res)
    return img
