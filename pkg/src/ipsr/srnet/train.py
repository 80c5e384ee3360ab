"""Adam training over (LR, HR) pairs, with optional fake-quant (QAT)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .loss import LossConfig, loss_tensor
from .network import NetworkSpec, Weights, as_params, check_weights, forward, init_weights, run_graph
from .quant import QuantParams, activation_nodes, fake_quantize, weight_params

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    batch_size: int = 50
    epochs: int = 100
    decay: float = 0.8
    decay_every: int = 10  # epochs
    max_steps: int | None = None
    patch: int | None = None  # random LR crop size; None trains on whole pairs
    loss: LossConfig = field(default_factory=LossConfig)
    qat: bool = False
    observer_momentum: float = 0.9
    seed: int = 0


@dataclass
class EpochRecord:
    epoch: int
    steps: int
    lr: float
    loss: float
    l1: float
    ssim: float
    val_psnr: float | None = None


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    step_l1: list[float] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["epoch,steps,lr,loss,l1,ssim,val_psnr"]
        for e in self.epochs:
            vp = "" if e.val_psnr is None else repr(e.val_psnr)
            lines.append(f"{e.epoch},{e.steps},{e.lr!r},{e.loss!r},{e.l1!r},{e.ssim!r},{vp}")
        return "\n".join(lines) + "\n"


def backward_gradients(spec: NetworkSpec, w: Weights, x: np.ndarray, hr: np.ndarray,
                       cfg: LossConfig = LossConfig()):
    """Loss value and ``{conv: (d kernel, d bias)}`` for every trainable conv."""
    check_weights(spec, w)
    params = as_params(w, requires_grad=True)
    sr = run_graph(spec, params, ag.Tensor(np.asarray(x)))
    total, parts = loss_tensor(sr, hr, cfg)
    total.backward()
    grads = {}
    for node in spec.trainable:
        k, b = params[node.name]
        grads[node.name] = (np.zeros_like(k.data) if k.grad is None else k.grad,
                            np.zeros_like(b.data) if b.grad is None else b.grad)
    return parts["total"], grads


def _as_chw(a) -> np.ndarray:
    a = np.asarray(getattr(a, "data", a))
    if a.ndim != 3:
        raise ValueError(f"expected a (C, H, W) image, got shape {a.shape}")
    return a


def stack_pairs(pairs, scale: int):
    """Validate pairs and return (lr, hr) lists of ``(C, H, W)`` arrays."""
    lrs, hrs = [], []
    for i, (lr, hr) in enumerate(pairs):
        lr, hr = _as_chw(lr), _as_chw(hr)
        if hr.shape[1:] != (lr.shape[1] * scale, lr.shape[2] * scale) or lr.shape[0] != hr.shape[0]:
            raise ValueError(f"pair {i}: HR {hr.shape} is not {scale}x LR {lr.shape}")
        lrs.append(lr)
        hrs.append(hr)
    if not lrs:
        raise ValueError("training needs at least one pair")
    return lrs, hrs


class Observers:
    """EMA min/max per activation tensor, for fake-quant during training."""

    def __init__(self, names, momentum: float):
        self.names = set(names)
        self.momentum = momentum
        self.lo: dict[str, float] = {}
        self.hi: dict[str, float] = {}
        self.training = True

    def params(self, name: str) -> QuantParams:
        return QuantParams.from_range(self.lo[name], self.hi[name])

    def __call__(self, name: str, t: ag.Tensor) -> ag.Tensor:
        if name not in self.names:
            return t
        lo, hi = float(t.data.min()), float(t.data.max())
        if self.training:
            if name in self.lo:
                m = self.momentum
                lo, hi = m * self.lo[name] + (1 - m) * lo, m * self.hi[name] + (1 - m) * hi
            self.lo[name], self.hi[name] = lo, hi
        return fake_quantize(t, self.params(name))


def _qat_weight_hook(node, k: ag.Tensor, b: ag.Tensor):
    return fake_quantize(k, weight_params(k.data)), b


def _crop(rng, lr, hr, patch, s):
    h, w = lr.shape[1:]
    if patch is None or (patch >= h and patch >= w):
        return lr, hr
    ph, pw = min(patch, h), min(patch, w)
    y, x = int(rng.integers(h - ph + 1)), int(rng.integers(w - pw + 1))
    return lr[:, y : y + ph, x : x + pw], hr[:, s * y : s * (y + ph), s * x : s * (x + pw)]


def _psnr(sr, hr) -> float:
    mse = float(np.mean((np.clip(sr, 0, 1) - hr) ** 2))
    return float("inf") if mse == 0 else 10 * np.log10(1.0 / mse)


def train(spec: NetworkSpec, pairs, cfg: TrainConfig = TrainConfig(), weights: Weights | None = None,
          val_pairs=None, dtype=np.float32):
    """Returns ``(weights, log)``; pairs are ``(lr, hr)`` images or arrays.

    Batches of equal-shape pairs are drawn without replacement each epoch;
    all randomness (init, shuffling, crops) flows from ``cfg.seed``.
    """
    s = spec.scale
    lrs, hrs = stack_pairs(pairs, s)
    if cfg.batch_size < 1:
        raise ValueError("batch size must be >= 1")
    if cfg.patch is None and len({a.shape for a in lrs}) > 1:
        raise ValueError("pairs differ in size; set a patch size to train on crops")
    rng = np.random.default_rng(cfg.seed)
    w = init_weights(spec, seed=cfg.seed, dtype=dtype) if weights is None else {
        k: (v[0].astype(dtype), v[1].astype(dtype)) for k, v in weights.items()}
    check_weights(spec, w)
    trainable = [n.name for n in spec.trainable]
    m = {n: [np.zeros_like(w[n][0]), np.zeros_like(w[n][1])] for n in trainable}
    v = {n: [np.zeros_like(w[n][0]), np.zeros_like(w[n][1])] for n in trainable}
    observers = Observers(activation_nodes(spec), cfg.observer_momentum) if cfg.qat else None
    whook = _qat_weight_hook if cfg.qat else None

    log_ = TrainLog()
    bs = min(cfg.batch_size, len(lrs))
    step = 0
    for epoch in range(cfg.epochs):
        lr_now = cfg.lr * cfg.decay ** (epoch // cfg.decay_every)
        order = rng.permutation(len(lrs))
        sums = np.zeros(3)
        nb = 0
        for start in range(0, len(order) - bs + 1, bs):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
            crops = [_crop(rng, lrs[i], hrs[i], cfg.patch, s) for i in order[start : start + bs]]
            x = np.stack([c[0] for c in crops]).astype(dtype)
            y = np.stack([c[1] for c in crops]).astype(dtype)
            params = as_params(w, requires_grad=True)
            for name in w:
                if name not in m:
                    params[name] = (ag.Tensor(w[name][0]), ag.Tensor(w[name][1]))
            sr = run_graph(spec, params, ag.Tensor(x), weight_hook=whook, act_hook=observers)
            total, parts = loss_tensor(sr, y, cfg.loss)
            if not np.isfinite(parts["total"]):
                raise TrainingError(f"non-finite loss {parts['total']} at epoch {epoch}, step {step}")
            total.backward()
            step += 1
            b1c, b2c = 1 - cfg.beta1 ** step, 1 - cfg.beta2 ** step
            for name in trainable:
                for j in range(2):
                    g = params[name][j].grad
                    if g is None:
                        continue
                    g = g.astype(dtype, copy=False)
                    m[name][j] = cfg.beta1 * m[name][j] + (1 - cfg.beta1) * g
                    v[name][j] = cfg.beta2 * v[name][j] + (1 - cfg.beta2) * g * g
                    upd = lr_now * (m[name][j] / b1c) / (np.sqrt(v[name][j] / b2c) + cfg.eps)
                    w[name] = (w[name][0] - upd, w[name][1]) if j == 0 else (w[name][0], w[name][1] - upd)
            log_.step_losses.append(parts["total"])
            log_.step_l1.append(parts["l1"])
            sums += (parts["total"], parts["l1"], parts.get("ssim", np.nan))
            nb += 1
        if nb == 0:
            break
        rec = EpochRecord(epoch, step, lr_now, *(sums / nb))
        if val_pairs:
            rec.val_psnr = validate(spec, w, val_pairs)
        log_.epochs.append(rec)
        log.info("epoch %d steps %d lr %.3g loss %.5f l1 %.5f%s", epoch, step, lr_now, rec.loss, rec.l1,
                 "" if rec.val_psnr is None else f" val_psnr {rec.val_psnr:.3f}")
    return w, log_


def validate(spec: NetworkSpec, w: Weights, pairs) -> float:
    """Mean RGB PSNR of clipped network output over pairs."""
    vals = []
    for lr, hr in pairs:
        lr, hr = _as_chw(lr), _as_chw(hr)
        vals.append(_psnr(forward(spec, w, lr[None])[0], hr))
    return float(np.mean(vals))


def mean_l1(spec: NetworkSpec, w: Weights, pairs) -> float:
    lrs, hrs = stack_pairs(pairs, spec.scale)
    return float(np.mean([np.abs(forward(spec, w, a[None])[0] - b).mean() for a, b in zip(lrs, hrs)]))
