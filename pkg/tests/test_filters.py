import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from ipsr.filters import (
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
    save_kernel,
    unsharp_mask,
)
from ipsr.imgcore import PlanarImage


def brute_correlate(a: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Nested-loop 2D correlation with explicit reflect-101 index folding."""
    h, w = a.shape
    r = k.shape[0] // 2

    def fold(i, n):
        while i < 0 or i >= n:
            i = -i if i < 0 else 2 * (n - 1) - i
        return i

    out = np.zeros_like(a)
    for y in range(h):
        for x in range(w):
            s = 0.0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    s += k[dy + r, dx + r] * a[fold(y + dy, h), fold(x + dx, w)]
            out[y, x] = s
    return out


def test_near_delta_gaussian():
    assert make_blur_kernel(IsoGaussian(0.01, 3)).weights[1, 1] > 0.999


def test_aniso_equal_sigmas_is_iso():
    a = make_blur_kernel(AnisoGaussian(1.0, 1.0, 0.7, 7)).weights
    b = make_blur_kernel(IsoGaussian(1.0, 7)).weights
    np.testing.assert_allclose(a, b, atol=1e-9, rtol=0)


def test_iso_matches_scalar_formula():
    k = make_blur_kernel(IsoGaussian(1.0, 5)).weights
    ref = np.array([[math.exp(-(x * x + y * y) / 2.0) for x in range(-2, 3)] for y in range(-2, 3)])
    np.testing.assert_allclose(k, ref / ref.sum(), atol=1e-15)


def test_aniso_matches_rotated_formula():
    sx, sy, th = 2.0, 0.7, 0.4
    k = make_blur_kernel(AnisoGaussian(sx, sy, th, 9)).weights
    ref = np.zeros((9, 9))
    for y in range(-4, 5):
        for x in range(-4, 5):
            # rotate the offset into the principal axes
            u = math.cos(th) * x + math.sin(th) * y
            v = -math.sin(th) * x + math.cos(th) * y
            ref[y + 4, x + 4] = math.exp(-0.5 * (u * u / sx**2 + v * v / sy**2))
    np.testing.assert_allclose(k, ref / ref.sum(), atol=1e-14)


@pytest.mark.parametrize("spec", [IsoGaussian(1.3), Sinc(1.5, 13), Sinc(math.pi, 7), AnisoGaussian(2.5, 0.8, 1.1)])
def test_kernel_sum_and_symmetry(spec):
    w = make_blur_kernel(spec).weights
    assert abs(w.sum() - 1) < 1e-6
    np.testing.assert_allclose(w, w[::-1, ::-1], atol=1e-15)


def test_kernel_errors():
    with pytest.raises(ValueError):
        make_blur_kernel(IsoGaussian(1.0, 4))
    with pytest.raises(ValueError):
        make_blur_kernel(IsoGaussian(0.0))
    with pytest.raises(ValueError):
        make_blur_kernel(Sinc(3.5))
    with pytest.raises(ValueError):
        Kernel2D(np.ones((2, 2)))


def test_default_gaussian_size():
    assert default_gaussian_size(1.0) == 7
    assert default_gaussian_size(5.0) == 21


def test_kernel_text_round_trip(tmp_path):
    k = make_blur_kernel(AnisoGaussian(1.7, 0.9, 0.3, 9))
    save_kernel(k, tmp_path / "k.txt")
    text = (tmp_path / "k.txt").read_text()
    assert text.splitlines()[0] == "9"
    np.testing.assert_array_equal(load_kernel(tmp_path / "k.txt").weights, k.weights)


def test_convolve_delta_and_constant(rng):
    img = PlanarImage(rng.random((3, 11, 9)))
    np.testing.assert_array_equal(convolve(img, Kernel2D.delta(5)).data, img.data)
    const = PlanarImage(np.full((1, 12, 12), 0.37))
    out = convolve(const, make_blur_kernel(IsoGaussian(1.1)))
    np.testing.assert_allclose(out.data, 0.37, atol=1e-12)


def test_convolve_ramp_box_oracle():
    ramp = np.arange(25, dtype=float).reshape(5, 5) / 24
    box = Kernel2D(np.full((3, 3), 1 / 9))
    out = convolve(PlanarImage(ramp[None]), box).data[0]
    np.testing.assert_allclose(out, brute_correlate(ramp, box.weights), atol=1e-15)


def test_convolve_asymmetric_kernel_oracle(rng):
    a = rng.random((7, 6))
    k = rng.random((5, 5))
    out = convolve(PlanarImage(a[None]), Kernel2D(k)).data[0]
    np.testing.assert_allclose(out, brute_correlate(a, k), atol=1e-12)


def test_convolve_too_large():
    with pytest.raises(ValueError):
        convolve(PlanarImage(np.zeros((1, 4, 4))), Kernel2D.delta(5))


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31))
def test_convolve_linear(a, b, seed):
    r = np.random.default_rng(seed)
    x, y = r.random((1, 9, 9)), r.random((1, 9, 9))
    k = make_blur_kernel(IsoGaussian(1.0, 5))
    lhs = convolve(PlanarImage(a * x + b * y), k).data
    rhs = a * convolve(PlanarImage(x), k).data + b * convolve(PlanarImage(y), k).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-5)


@pytest.mark.parametrize("method", RESAMPLE_METHODS)
def test_resample_identity_and_constant(rng, method):
    img = PlanarImage(rng.random((3, 7, 10)))
    np.testing.assert_allclose(resample(img, 7, 10, method).data, img.data, atol=1e-6)
    up = resample(PlanarImage(np.full((1, 2, 2), 0.7)), 6, 6, method)
    np.testing.assert_allclose(up.data, 0.7, atol=1e-12)
    const = PlanarImage(np.full((3, 12, 9), 0.3))
    down = resample(const, 4, 3, method)
    np.testing.assert_allclose(resample(down, 12, 9, method).data, 0.3, atol=1e-12)


def test_area_checkerboard_block_mean():
    yy, xx = np.mgrid[0:6, 0:6]
    board = ((yy + xx) % 2).astype(float)
    out = resample(PlanarImage(board[None]), 2, 2, "area").data[0]
    ref = board.reshape(2, 3, 2, 3).mean(axis=(1, 3))
    np.testing.assert_allclose(out, ref, atol=1e-15)


def test_nearest_floor_center():
    a = np.arange(6, dtype=float)[None, None, :]
    out = resample(PlanarImage(a), 1, 2, "nearest").data.ravel()
    # centers of the 2 outputs sit at source 1.5 and 4.5 -> floor picks 1 and 4
    np.testing.assert_array_equal(out, [1.0, 4.0])


@pytest.mark.parametrize("size_in, size_out", [(48, 16), (30, 45), (64, 21)])
def test_bicubic_matches_pillow_interior(rng, size_in, size_out):
    # Pillow's float-mode bicubic uses the same a=-0.5 kernel and support scaling;
    # borders differ (Pillow renormalizes clipped taps), so compare the interior
    a = rng.random((size_in, size_in)).astype(np.float32)
    ref = np.asarray(Image.fromarray(a, mode="F").resize((size_out, size_out), Image.Resampling.BICUBIC))
    out = resample(PlanarImage(a[None].astype(np.float64)), size_out, size_out, "bicubic").data[0]
    m = int(math.ceil(2 * max(size_in / size_out, 1) * size_out / size_in)) + 2
    np.testing.assert_allclose(out[m:-m, m:-m], ref[m:-m, m:-m], atol=2e-5)


def test_resample_errors():
    with pytest.raises(ValueError):
        resample(PlanarImage(np.zeros((1, 3, 3))), 0, 2)
    with pytest.raises(ValueError):
        resample(PlanarImage(np.zeros((1, 3, 3))), 2, 2, "lanczos")


def test_unsharp_identities(rng):
    img = PlanarImage(rng.random((3, 10, 10)))
    np.testing.assert_array_equal(unsharp_mask(img, 1.0, 0.0).data, img.data)
    const = PlanarImage(np.full((1, 10, 10), 0.4))
    np.testing.assert_allclose(unsharp_mask(const, 1.0, 0.8).data, 0.4, atol=1e-12)
    with pytest.raises(ValueError):
        unsharp_mask(img, 0.0, 1.0)


def test_unsharp_step_edge_1d_formula():
    # a vertical step is constant along rows, so the 2D blur reduces to a 1D one
    n = 24
    row = np.r_[np.zeros(n // 2), np.ones(n // 2)]
    img = PlanarImage(np.tile(row, (n, 1))[None])
    sigma, amount = 1.0, 0.5
    taps = np.array([math.exp(-t * t / (2 * sigma**2)) for t in range(-3, 4)])
    taps /= taps.sum()
    padded = np.r_[row[3:0:-1], row, row[-2:-5:-1]]
    blurred = np.array([np.dot(taps, padded[i : i + 7]) for i in range(n)])
    raw = row + amount * (row - blurred)
    # overshoot on both sides of the edge before clamping
    assert raw.max() > 1.0 and raw.min() < 0.0
    out = unsharp_mask(img, sigma, amount).data[0]
    np.testing.assert_allclose(out[n // 2], np.clip(raw, 0, 1), atol=1e-12)


def test_unsharp_threshold_suppresses_small_detail(rng):
    img = PlanarImage(0.5 + 0.001 * rng.standard_normal((1, 16, 16)))
    np.testing.assert_array_equal(unsharp_mask(img, 1.0, 1.0, threshold=0.1).data, img.data)
