"""Per-tensor asymmetric uint8 quantization and an integer inference engine.

Convs run on uint8 activations and weights with integer accumulation and an
integer bias at scale ``s_x * s_w``; results are requantized to the output
tensor's parameters with a real multiplier. A conv whose only consumer is a
relu writes directly in the relu's (non-negative) range, so the clamp at the
zero point performs the relu.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import ops
from .network import NetworkSpec, Node, Weights, as_params, check_weights, run_graph

QMIN, QMAX = 0, 255
INT32_MIN, INT32_MAX = -(2**31), 2**31 - 1


def round_half_away(v):
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def _f32_ceil(x: float) -> float:
    # smallest float32 >= x, so a stored scale still covers the calibrated range
    f = np.float32(x)
    if float(f) < x:
        f = np.nextafter(f, np.float32(np.inf))
    return float(f)


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int

    def __post_init__(self):
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise ValueError(f"quantization scale must be positive, got {self.scale}")
        if not QMIN <= self.zero_point <= QMAX:
            raise ValueError(f"zero point {self.zero_point} outside [0, 255]")

    @classmethod
    def from_range(cls, lo: float, hi: float) -> "QuantParams":
        """Asymmetric params for ``[lo, hi]`` widened to include 0."""
        lo, hi = min(float(lo), 0.0), max(float(hi), 0.0)
        if hi - lo <= 0:
            return cls(1.0, 0)
        scale = _f32_ceil((hi - lo) / (QMAX - QMIN))
        zp = int(np.clip(round_half_away(-lo / scale), QMIN, QMAX))
        return cls(scale, zp)

    @property
    def range(self) -> tuple[float, float]:
        return (QMIN - self.zero_point) * self.scale, (QMAX - self.zero_point) * self.scale

    def quantize(self, x) -> np.ndarray:
        q = round_half_away(np.asarray(x, dtype=np.float64) / self.scale) + self.zero_point
        return np.clip(q, QMIN, QMAX).astype(np.uint8)

    def dequantize(self, q) -> np.ndarray:
        return (np.asarray(q, dtype=np.float64) - self.zero_point) * self.scale


def fake_quantize(x, qp: QuantParams):
    """Quantize then dequantize; Tensors get a straight-through gradient."""
    if isinstance(x, ag.Tensor):
        return ag.fake_quantize(x, qp.scale, qp.zero_point)
    return ag.fake_quantize_array(np.asarray(x), qp.scale, qp.zero_point)


def consumers(spec: NetworkSpec) -> dict[str, list[Node]]:
    out: dict[str, list[Node]] = {"input": []}
    for n in spec.nodes:
        out[n.name] = []
        for i in n.inputs:
            out[i].append(n)
    return out


def fused_relu(spec: NetworkSpec) -> dict[str, str]:
    """conv name -> relu name, for convs whose single consumer is a relu."""
    cons = consumers(spec)
    fused = {}
    for n in spec.conv_nodes:
        c = cons[n.name]
        if len(c) == 1 and c[0].op == "relu" and n.name != spec.output:
            fused[n.name] = c[0].name
    return fused


def activation_nodes(spec: NetworkSpec) -> list[str]:
    """Tensors that carry their own quantization params, in graph order."""
    fused = fused_relu(spec)
    names = ["input"]
    for n in spec.nodes:
        if n.name in fused or n.op in ("depth_to_space", "space_to_depth"):
            continue
        names.append(n.name)
    return names


def weight_params(k: np.ndarray) -> QuantParams:
    return QuantParams.from_range(float(k.min()), float(k.max()))


@dataclass
class QuantConv:
    qweight: np.ndarray  # uint8, same layout as the float kernel
    wparams: QuantParams
    qbias: np.ndarray  # int64 holding int32-range values, scale s_in * s_w


class QuantizedNetwork:
    """Integer-arithmetic inference for a calibrated ``NetworkSpec``."""

    def __init__(self, spec: NetworkSpec, weights: Weights, act: dict[str, QuantParams]):
        check_weights(spec, weights)
        missing = set(activation_nodes(spec)) - set(act)
        if missing:
            raise ValueError(f"missing activation params for {sorted(missing)}")
        self.spec = spec
        self.weights = {k: (np.asarray(v[0], np.float32), np.asarray(v[1], np.float32)) for k, v in weights.items()}
        self.act = dict(act)
        self._fused = fused_relu(spec)
        self._in_params = {}
        for n in spec.nodes:
            self._in_params[n.name] = [self.params_of(i) for i in n.inputs]
        self.convs: dict[str, QuantConv] = {}
        for n in spec.conv_nodes:
            k, b = self.weights[n.name]
            wp = weight_params(k)
            s_in = self._in_params[n.name][0].scale
            qb = round_half_away(b.astype(np.float64) / (s_in * wp.scale))
            qb = np.clip(qb, INT32_MIN, INT32_MAX).astype(np.int64)
            self.convs[n.name] = QuantConv(wp.quantize(k), wp, qb)

    def params_of(self, name: str) -> QuantParams:
        """Params of the tensor named ``name`` (resolving fusion and pass-through)."""
        if name in self.act and name not in self._fused:
            return self.act[name]
        if name in self._fused:
            return self.act[self._fused[name]]
        node = next(n for n in self.spec.nodes if n.name == name)
        return self.params_of(node.inputs[0])

    def _requant(self, q: np.ndarray, src: QuantParams, dst: QuantParams) -> np.ndarray:
        real = (q.astype(np.float64) - src.zero_point) * (src.scale / dst.scale)
        return np.clip(round_half_away(real) + dst.zero_point, QMIN, QMAX).astype(np.uint8)

    def _conv(self, node: Node, q: np.ndarray) -> np.ndarray:
        qc = self.convs[node.name]
        pin = self._in_params[node.name][0]
        # integer-valued float64: every product sum is far below 2**53, so the
        # BLAS matmul is exact and equals the int32 accumulation
        x = q.astype(np.float64) - pin.zero_point
        w = qc.qweight.astype(np.float64) - qc.wparams.zero_point
        if node.op == "conv2d":
            acc = ops.conv2d(x, w, None)
        else:
            acc = ops.conv_transpose2d(x, w, None, node.attrs.get("stride", 1), node.attrs.get("padding", 0))
        acc = acc + qc.qbias[None, :, None, None]
        if acc.size and (acc.max() > INT32_MAX or acc.min() < INT32_MIN):
            raise OverflowError(f"{node.name}: accumulator exceeds the int32 range")
        out = self.params_of(node.name)
        mult = pin.scale * qc.wparams.scale / out.scale
        return np.clip(round_half_away(acc * mult) + out.zero_point, QMIN, QMAX).astype(np.uint8)

    def run_quantized(self, x: np.ndarray) -> np.ndarray:
        """uint8 output tensor of the network for a float NCHW input."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ValueError(f"expected an N x {self.spec.in_channels} x H x W input, got {x.shape}")
        env = {"input": self.act["input"].quantize(x)}
        for node in self.spec.nodes:
            ins = [env[i] for i in node.inputs]
            pins = self._in_params[node.name]
            if node.op in ("conv2d", "conv_transpose2d"):
                out = self._conv(node, ins[0])
            elif node.op == "relu":
                if node.inputs[0] in self._fused:
                    out = ins[0]  # already clamped at the relu's zero point
                else:
                    p = pins[0]
                    out = self._requant(np.maximum(ins[0], p.zero_point), p, self.act[node.name])
            elif node.op == "add":
                dst = self.act[node.name]
                real = pins[0].dequantize(ins[0]) + pins[1].dequantize(ins[1])
                out = dst.quantize(real)
            elif node.op == "concat":
                dst = self.act[node.name]
                out = np.concatenate([self._requant(q, p, dst) for q, p in zip(ins, pins)], axis=1)
            elif node.op == "depth_to_space":
                out = ops.depth_to_space(ins[0], node.attrs["r"])
            else:
                out = ops.space_to_depth(ins[0], node.attrs["r"])
            env[node.name] = out
        return env[self.spec.output]

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Dequantized float output."""
        return self.output_params.dequantize(self.run_quantized(x))

    @property
    def output_params(self) -> QuantParams:
        return self.params_of(self.spec.output)


def calibrate(spec: NetworkSpec, w: Weights, images) -> dict[str, QuantParams]:
    """Min/max activation ranges over calibration inputs (each ``(3, H, W)`` or NCHW)."""
    lo: dict[str, float] = {}
    hi: dict[str, float] = {}
    params = as_params({k: (v[0].astype(np.float64), v[1].astype(np.float64)) for k, v in w.items()})
    seen = 0
    for img in images:
        x = np.asarray(getattr(img, "data", img), dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        env = run_graph(spec, params, ag.Tensor(x), keep=True)
        for name, t in env.items():
            lo[name] = min(lo.get(name, np.inf), float(t.data.min()))
            hi[name] = max(hi.get(name, -np.inf), float(t.data.max()))
        seen += 1
    if not seen:
        raise ValueError("calibration needs at least one image")
    return {name: QuantParams.from_range(lo[name], hi[name]) for name in activation_nodes(spec)}


def calibrate_and_quantize(spec: NetworkSpec, w: Weights, images) -> QuantizedNetwork:
    """Post-training quantization from calibration images."""
    check_weights(spec, w)
    return QuantizedNetwork(spec, w, calibrate(spec, w, images))
