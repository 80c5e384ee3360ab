"""Whole-image super-resolution with a float or quantized model."""

from __future__ import annotations

import numpy as np

from ..imgcore import PlanarImage
from .network import NetworkSpec, Weights, forward
from .quant import QuantizedNetwork


def upscale(spec: NetworkSpec, model: Weights | QuantizedNetwork, img: PlanarImage) -> PlanarImage:
    """Run the network on one image; gray inputs are replicated to RGB and averaged back."""
    x = img.data
    if img.channels == 1:
        x = np.repeat(x, 3, axis=0)
    k = spec.nodes[0].attrs.get("k", 3)
    if min(img.height, img.width) <= k // 2:
        raise ValueError(f"image {img.height}x{img.width} too small for the network")
    if isinstance(model, QuantizedNetwork):
        out = model.forward(x[None])[0]
    else:
        out = forward(spec, model, x[None].astype(np.float32)).astype(np.float64)[0]
    if img.channels == 1:
        out = out.mean(axis=0, keepdims=True)
    return PlanarImage(np.clip(out, 0.0, 1.0))
