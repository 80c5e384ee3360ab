"""Binary weight files.

Layout (little-endian)::

    b"IPSR"  version:u16  flags:u16
    channels:u16  blocks:u16  scale:u16  anchor:u8
    for each trainable conv, in graph order: kernel f32[...], bias f32[c_out]
    if flags & QUANTIZED:
        for each conv, in graph order: weight scale f32, zero point u8
        count:u16, then per activation tensor: scale f32, zero point u8

Fixed convs (the anchor) are rebuilt from the architecture and not stored.
Quantized weights and biases are re-derived from the stored float weights and
parameters, which is deterministic, so load then save reproduces the bytes.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .network import NetworkSpec, Weights, _fixed_weights, build_network, check_weights
from .quant import QuantizedNetwork, QuantParams, activation_nodes, weight_params

MAGIC = b"IPSR"
VERSION = 1
QUANTIZED = 1
_HEADER = struct.Struct("<4sHHHHHB")
_QREC = struct.Struct("<fB")


class WeightFileError(ValueError):
    pass


def _arch(spec: NetworkSpec) -> dict:
    if spec.arch is None:
        raise WeightFileError("only networks made by build_network can be saved")
    return spec.arch


def _pack_qp(qp: QuantParams) -> bytes:
    if float(np.float32(qp.scale)) != qp.scale:
        raise WeightFileError(f"scale {qp.scale!r} is not representable as float32")
    return _QREC.pack(qp.scale, qp.zero_point)


def encode_weights(spec: NetworkSpec, w: Weights, qnet: QuantizedNetwork | None = None) -> bytes:
    arch = _arch(spec)
    check_weights(spec, w)
    if qnet is not None:
        w = qnet.weights
    parts = [_HEADER.pack(MAGIC, VERSION, QUANTIZED if qnet is not None else 0, arch["channels"], arch["blocks"],
                          arch["scale"], int(arch["anchor"]))]
    for node in spec.trainable:
        k, b = w[node.name]
        parts.append(np.asarray(k, dtype="<f4").tobytes())
        parts.append(np.asarray(b, dtype="<f4").tobytes())
    if qnet is not None:
        for node in spec.conv_nodes:
            parts.append(_pack_qp(qnet.convs[node.name].wparams))
        names = activation_nodes(spec)
        parts.append(struct.pack("<H", len(names)))
        for name in names:
            parts.append(_pack_qp(qnet.act[name]))
    return b"".join(parts)


def save_weights(path: str | os.PathLike, spec: NetworkSpec, w: Weights, qnet: QuantizedNetwork | None = None) -> None:
    data = encode_weights(spec, w, qnet)
    with open(path, "wb") as fh:
        fh.write(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise WeightFileError(f"truncated weight file: need {n} bytes at offset {self.pos}, "
                                  f"have {len(self.data) - self.pos}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))


def decode_weights(data: bytes, spec: NetworkSpec | None = None):
    """Returns ``(spec, weights, qnet)``; ``qnet`` is None for float files."""
    rd = _Reader(data)
    magic, version, flags, c, b, r, anchor = rd.unpack(_HEADER)
    if magic != MAGIC:
        raise WeightFileError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise WeightFileError(f"unsupported weight file version {version}")
    if flags & ~QUANTIZED:
        raise WeightFileError(f"unknown header flags {flags:#x}")
    try:
        file_spec = build_network(c, b, r, bool(anchor))
    except ValueError as e:
        raise WeightFileError(f"invalid architecture in header: {e}") from None
    if spec is not None and spec.arch != file_spec.arch:
        raise WeightFileError(f"file architecture {file_spec.arch} does not match requested {spec.arch}")
    spec = file_spec
    w: Weights = {}
    for node in spec.conv_nodes:
        if node.attrs.get("fixed"):
            w[node.name] = _fixed_weights(node, np.float32)
            continue
        a = node.attrs
        kshape = (a["c_out"], a["c_in"], a["k"], a["k"])
        kn = int(np.prod(kshape))
        k = np.frombuffer(rd.take(4 * kn), dtype="<f4").reshape(kshape).astype(np.float32)
        bias = np.frombuffer(rd.take(4 * a["c_out"]), dtype="<f4").astype(np.float32)
        w[node.name] = (k, bias)
    try:
        check_weights(spec, w)
    except ValueError as e:
        raise WeightFileError(str(e)) from None
    qnet = None
    if flags & QUANTIZED:
        wparams = {node.name: QuantParams(*rd.unpack(_QREC)) for node in spec.conv_nodes}
        (count,) = rd.unpack(struct.Struct("<H"))
        names = activation_nodes(spec)
        if count != len(names):
            raise WeightFileError(f"file lists {count} activation records, network needs {len(names)}")
        try:
            act = {name: QuantParams(*rd.unpack(_QREC)) for name in names}
        except ValueError as e:
            raise WeightFileError(str(e)) from None
        qnet = QuantizedNetwork(spec, w, act)
        for name, qp in wparams.items():
            if weight_params(w[name][0]) != qp:
                raise WeightFileError(f"{name}: stored weight params disagree with the stored weights")
    if rd.pos != len(data):
        raise WeightFileError(f"{len(data) - rd.pos} trailing bytes after the weight data")
    return spec, w, qnet


def load_model(path: str | os.PathLike, spec: NetworkSpec | None = None):
    """``(spec, weights, qnet)`` read from ``path``."""
    with open(path, "rb") as fh:
        data = fh.read()
    return decode_weights(data, spec)


def load_weights(path: str | os.PathLike, spec: NetworkSpec | None = None):
    """Float ``Weights`` for float files, a ``QuantizedNetwork`` for quantized ones."""
    _, w, qnet = load_model(path, spec)
    return w if qnet is None else qnet
