"""Layer graphs restricted to the seven mobile-friendly operators."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from . import autograd as ag

OPERATORS = frozenset({"conv2d", "conv_transpose2d", "concat", "add", "relu", "depth_to_space", "space_to_depth"})


@dataclass(frozen=True)
class Node:
    name: str
    op: str
    inputs: tuple[str, ...]
    attrs: dict = field(default_factory=dict)


@dataclass
class NetworkSpec:
    """Ordered DAG; the first node input named ``"input"`` is the image tensor.

    ``arch`` records (channels, blocks, scale, anchor) for networks built by
    ``build_network`` and is what the weight-file header stores.
    """

    nodes: list[Node]
    in_channels: int = 3
    output: str = ""
    arch: dict | None = None

    def __post_init__(self):
        if not self.output:
            self.output = self.nodes[-1].name
        self.validate()

    def validate(self) -> None:
        channels = {"input": self.in_channels}
        for node in self.nodes:
            if node.op not in OPERATORS:
                raise ValueError(f"operator {node.op!r} is not permitted")
            if node.name in channels:
                raise ValueError(f"duplicate node name {node.name!r}")
            for i in node.inputs:
                if i not in channels:
                    raise ValueError(f"node {node.name!r} reads undefined tensor {i!r}")
            cin = [channels[i] for i in node.inputs]
            a = node.attrs
            if node.op in ("conv2d", "conv_transpose2d"):
                if len(cin) != 1 or cin[0] != a["c_in"]:
                    raise ValueError(f"{node.name}: expects {a['c_in']} input channels, got {cin}")
                if node.op == "conv2d" and a["k"] % 2 == 0:
                    raise ValueError(f"{node.name}: conv kernel size must be odd")
                c = a["c_out"]
            elif node.op == "add":
                if len(cin) != 2 or cin[0] != cin[1]:
                    raise ValueError(f"{node.name}: add needs two equal-channel inputs, got {cin}")
                c = cin[0]
            elif node.op == "concat":
                c = sum(cin)
            elif node.op == "relu":
                c = cin[0]
            elif node.op == "depth_to_space":
                r = a["r"]
                if cin[0] % (r * r):
                    raise ValueError(f"{node.name}: {cin[0]} channels not divisible by {r * r}")
                c = cin[0] // (r * r)
            else:
                c = cin[0] * a["r"] ** 2
            channels[node.name] = c
        if self.output not in channels:
            raise ValueError(f"output {self.output!r} is not a node")
        self.out_channels = channels[self.output]

    @property
    def conv_nodes(self) -> list[Node]:
        return [n for n in self.nodes if n.op in ("conv2d", "conv_transpose2d")]

    @property
    def trainable(self) -> list[Node]:
        return [n for n in self.conv_nodes if not n.attrs.get("fixed")]

    @property
    def scale(self) -> int:
        """Output/input size ratio along the path to the output (exact fractions)."""
        ratio = {"input": Fraction(1)}
        for n in self.nodes:
            s = ratio[n.inputs[0]]
            if n.op == "depth_to_space":
                s *= n.attrs["r"]
            elif n.op == "space_to_depth":
                s /= n.attrs["r"]
            elif n.op == "conv_transpose2d":
                s *= n.attrs.get("stride", 1)
            ratio[n.name] = s
        out = ratio[self.output]
        if out.denominator != 1:
            raise ValueError(f"network scale {out} is not an integer")
        return int(out)

    def parameter_count(self) -> int:
        return sum(n.attrs["k"] ** 2 * n.attrs["c_in"] * n.attrs["c_out"] + n.attrs["c_out"] for n in self.trainable)


def conv(name, src, c_in, c_out, k=3, **extra) -> Node:
    return Node(name, "conv2d", (src,), {"c_in": c_in, "c_out": c_out, "k": k, **extra})


def build_network(channels: int = 32, blocks: int = 4, scale: int = 3, anchor: bool = False) -> NetworkSpec:
    """Head conv+relu, ``blocks`` conv+relu, skip add, tail conv, depth_to_space."""
    if channels < 1 or scale < 1 or blocks < 0:
        raise ValueError("channels and scale must be >= 1, blocks >= 0")
    r2 = scale * scale
    nodes = [conv("head", "input", 3, channels), Node("head_relu", "relu", ("head",))]
    prev = "head_relu"
    for i in range(blocks):
        nodes.append(conv(f"body{i}", prev, channels, channels))
        nodes.append(Node(f"body{i}_relu", "relu", (f"body{i}",)))
        prev = f"body{i}_relu"
    nodes.append(Node("skip", "add", ("head_relu", prev)))
    nodes.append(conv("tail", "skip", channels, 3 * r2))
    last = "tail"
    if anchor:
        # fixed 1x1 conv that repeats each input channel r^2 times, so that
        # depth_to_space of it is the nearest-neighbor upscale of the input
        nodes.append(conv("anchor", "input", 3, 3 * r2, k=1, fixed=True))
        nodes.append(Node("anchor_add", "add", ("tail", "anchor")))
        last = "anchor_add"
    nodes.append(Node("upscale", "depth_to_space", (last,), {"r": scale}))
    arch = {"channels": channels, "blocks": blocks, "scale": scale, "anchor": bool(anchor)}
    return NetworkSpec(nodes, arch=arch)


Weights = dict  # node name -> (kernel, bias) numpy arrays


def _fixed_weights(node: Node, dtype) -> tuple[np.ndarray, np.ndarray]:
    a = node.attrs
    w = np.zeros((a["c_out"], a["c_in"], a["k"], a["k"]), dtype=dtype)
    rep = a["c_out"] // a["c_in"]
    c = a["k"] // 2
    for o in range(a["c_out"]):
        w[o, o // rep, c, c] = 1.0
    return w, np.zeros(a["c_out"], dtype=dtype)


def init_weights(spec: NetworkSpec, seed: int = 0, dtype=np.float32) -> Weights:
    """He-normal kernels and zero biases; the last trainable conv is scaled down."""
    rng = np.random.default_rng(seed)
    w: Weights = {}
    trainable = spec.trainable
    for node in spec.conv_nodes:
        a = node.attrs
        if a.get("fixed"):
            w[node.name] = _fixed_weights(node, dtype)
            continue
        fan_in = a["c_in"] * a["k"] ** 2
        std = np.sqrt(2.0 / fan_in)
        if node is trainable[-1]:
            std *= 0.1
        if node.op == "conv2d":
            shape = (a["c_out"], a["c_in"], a["k"], a["k"])
        else:
            shape = (a["c_in"], a["c_out"], a["k"], a["k"])
        w[node.name] = (rng.normal(0.0, std, size=shape).astype(dtype), np.zeros(a["c_out"], dtype=dtype))
    return w


def zero_weights(spec: NetworkSpec, dtype=np.float32) -> Weights:
    """All-zero trainable weights; fixed (anchor) convs keep their constant kernels."""
    w: Weights = {}
    for node in spec.conv_nodes:
        if node.attrs.get("fixed"):
            w[node.name] = _fixed_weights(node, dtype)
        else:
            a = node.attrs
            shape = ((a["c_out"], a["c_in"], a["k"], a["k"]) if node.op == "conv2d"
                     else (a["c_in"], a["c_out"], a["k"], a["k"]))
            w[node.name] = (np.zeros(shape, dtype=dtype), np.zeros(a["c_out"], dtype=dtype))
    return w


def check_weights(spec: NetworkSpec, w: Weights) -> None:
    for node in spec.conv_nodes:
        if node.name not in w:
            raise ValueError(f"missing weights for {node.name!r}")
        a = node.attrs
        kshape = ((a["c_out"], a["c_in"], a["k"], a["k"]) if node.op == "conv2d"
                  else (a["c_in"], a["c_out"], a["k"], a["k"]))
        k, b = w[node.name]
        if k.shape != kshape or b.shape != (a["c_out"],):
            raise ValueError(f"{node.name}: weight shapes {k.shape}/{b.shape} do not match {kshape}")
        if not (np.all(np.isfinite(k)) and np.all(np.isfinite(b))):
            raise ValueError(f"{node.name}: non-finite weights")


# hooks let QAT wrap weights and activations without a second interpreter
WeightHook = Callable[[Node, ag.Tensor, ag.Tensor], tuple]
ActHook = Callable[[str, ag.Tensor], ag.Tensor]


def run_graph(spec: NetworkSpec, params: dict, x: ag.Tensor, weight_hook: WeightHook | None = None,
              act_hook: ActHook | None = None, keep: bool = False):
    """Evaluate the graph on ``x``; ``params`` maps node name -> (kernel, bias) Tensors."""
    if x.shape[1] != spec.in_channels:
        raise ValueError(f"expected {spec.in_channels} input channels, got {x.shape[1]}")
    env = {"input": act_hook("input", x) if act_hook else x}
    for node in spec.nodes:
        ins = [env[i] for i in node.inputs]
        if node.op == "conv2d" or node.op == "conv_transpose2d":
            k, b = params[node.name]
            if weight_hook is not None:
                k, b = weight_hook(node, k, b)
            if node.op == "conv2d":
                kk = node.attrs["k"]
                if min(ins[0].shape[2:]) <= kk // 2:
                    raise ValueError(f"{node.name}: input {ins[0].shape[2:]} too small for a {kk}x{kk} kernel")
                out = ag.conv2d(ins[0], k, b)
            else:
                out = ag.conv_transpose2d(ins[0], k, b, node.attrs.get("stride", 1), node.attrs.get("padding", 0))
        elif node.op == "relu":
            out = ag.relu(ins[0])
        elif node.op == "add":
            out = ag.add(ins[0], ins[1])
        elif node.op == "concat":
            out = ag.concat(ins, axis=1)
        elif node.op == "depth_to_space":
            out = ag.depth_to_space(ins[0], node.attrs["r"])
        else:
            out = ag.space_to_depth(ins[0], node.attrs["r"])
        if act_hook is not None:
            out = act_hook(node.name, out)
        env[node.name] = out
    return env if keep else env[spec.output]


def as_params(w: Weights, requires_grad: bool = False) -> dict:
    make = ag.parameter if requires_grad else ag.Tensor
    return {k: (make(v[0]), make(v[1])) for k, v in w.items()}


def forward(spec: NetworkSpec, w: Weights, x: np.ndarray) -> np.ndarray:
    """Float inference: ``(N, 3, H, W) -> (N, 3, r*H, r*W)``."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise ValueError(f"expected an NCHW tensor, got shape {x.shape}")
    check_weights(spec, w)
    dtype = np.result_type(x.dtype, next(iter(w.values()))[0].dtype)
    params = {k: (ag.Tensor(v[0].astype(dtype, copy=False)), ag.Tensor(v[1].astype(dtype, copy=False)))
              for k, v in w.items()}
    return run_graph(spec, params, ag.Tensor(x.astype(dtype, copy=False))).data
