"""NCHW numpy kernels for the seven network operators and their adjoints.

Convolutions use reflect-101 "same" padding. ``depth_to_space`` follows
``out[n, c, y*r + i, x*r + j] = in[n, c*r*r + i*r + j, y, x]``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def pad_reflect(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    if p >= min(x.shape[-2:]):
        raise ValueError(f"reflect padding {p} needs spatial dims > {p}, got {x.shape[-2:]}")
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), mode="reflect")


def pad_reflect_adjoint(g: np.ndarray, p: int) -> np.ndarray:
    """Fold gradients of a reflect-101 padded tensor back onto the interior."""
    if p == 0:
        return g
    g = g.copy()
    # rows: padded row p-1-i mirrors interior row p+1+i (padded coordinates)
    for i in range(p):
        g[:, :, 2 * p - i, :] += g[:, :, i, :]
        g[:, :, -2 * p - 1 + i, :] += g[:, :, -1 - i, :]
    g = g[:, :, p:-p, :]
    for i in range(p):
        g[:, :, :, 2 * p - i] += g[:, :, :, i]
        g[:, :, :, -2 * p - 1 + i] += g[:, :, :, -1 - i]
    return g[:, :, :, p:-p]


def _im2col(xp: np.ndarray, k: int, h: int, w: int) -> np.ndarray:
    # (N, C, H, W, k, k) -> (N*H*W, C*k*k)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, :h, :w]
    n, c = xp.shape[:2]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * k * k)


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None) -> np.ndarray:
    """Stride-1 correlation, "same" output size, reflect-101 borders."""
    n, c, h, wd = x.shape
    co, ci, k, k2 = w.shape
    if ci != c or k != k2 or k % 2 == 0:
        raise ValueError(f"conv weight {w.shape} does not fit input {x.shape}")
    cols = _im2col(pad_reflect(x, k // 2), k, h, wd)
    out = cols @ w.reshape(co, -1).T
    if b is not None:
        out += b
    return out.reshape(n, h, wd, co).transpose(0, 3, 1, 2)


def conv2d_backward(x: np.ndarray, w: np.ndarray, gy: np.ndarray):
    n, c, h, wd = x.shape
    co, ci, k, _ = w.shape
    p = k // 2
    cols = _im2col(pad_reflect(x, p), k, h, wd)
    gflat = gy.transpose(0, 2, 3, 1).reshape(-1, co)
    gw = (gflat.T @ cols).reshape(w.shape)
    gb = gflat.sum(axis=0)
    gcols = (gflat @ w.reshape(co, -1)).reshape(n, h, wd, c, k, k)
    gxp = np.zeros((n, c, h + 2 * p, wd + 2 * p), dtype=gy.dtype)
    for a in range(k):
        for bb in range(k):
            gxp[:, :, a : a + h, bb : bb + wd] += gcols[..., a, bb].transpose(0, 3, 1, 2)
    return pad_reflect_adjoint(gxp, p), gw, gb


def conv_transpose2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, stride: int = 1,
                     padding: int = 0) -> np.ndarray:
    """Transposed convolution; ``w`` has shape (C_in, C_out, k, k), zero padding."""
    n, c, h, wd = x.shape
    ci, co, k, _ = w.shape
    if ci != c:
        raise ValueError(f"transposed conv weight {w.shape} does not fit input {x.shape}")
    full_h, full_w = (h - 1) * stride + k, (wd - 1) * stride + k
    out = np.zeros((n, co, full_h, full_w), dtype=np.result_type(x, w))
    # contrib[n, co, y, x, a, b] = sum_ci x[n, ci, y, x] * w[ci, co, a, b]
    contrib = np.tensordot(x, w, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
    for a in range(k):
        for bb in range(k):
            out[:, :, a : a + stride * h : stride, bb : bb + stride * wd : stride] += contrib[..., a, bb]
    if padding:
        out = out[:, :, padding : full_h - padding, padding : full_w - padding]
    if b is not None:
        out += b[None, :, None, None]
    return out


def conv_transpose2d_backward(x: np.ndarray, w: np.ndarray, gy: np.ndarray, stride: int = 1, padding: int = 0):
    n, c, h, wd = x.shape
    ci, co, k, _ = w.shape
    full_h, full_w = (h - 1) * stride + k, (wd - 1) * stride + k
    g = np.zeros((n, co, full_h, full_w), dtype=gy.dtype)
    g[:, :, padding : full_h - padding, padding : full_w - padding] = gy
    gx = np.zeros_like(x, dtype=gy.dtype)
    gw = np.zeros_like(w, dtype=gy.dtype)
    for a in range(k):
        for bb in range(k):
            ga = g[:, :, a : a + stride * h : stride, bb : bb + stride * wd : stride]
            gx += np.einsum("nohw,io->nihw", ga, w[:, :, a, bb])
            gw[:, :, a, bb] = np.einsum("nihw,nohw->io", x, ga)
    return gx, gw, gy.sum(axis=(0, 2, 3))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def depth_to_space(x: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = x.shape
    if c % (r * r):
        raise ValueError(f"depth_to_space({r}) needs channels divisible by {r * r}, got {c}")
    oc = c // (r * r)
    return x.reshape(n, oc, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, oc, h * r, w * r)


def space_to_depth(x: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = x.shape
    if h % r or w % r:
        raise ValueError(f"space_to_depth({r}) needs spatial dims divisible by {r}, got {h}x{w}")
    return x.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h // r, w // r)


def concat(xs, axis: int = 1) -> np.ndarray:
    return np.concatenate(xs, axis=axis)
