"""Array-op tests against independent brute-force oracles."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from aodeconv.image import (
    Convolver,
    connected_component_of,
    convolve,
    convolve_adjoint,
    dilate,
    finite_diff,
    finite_diff_adjoint,
    grid_center,
    median_filter,
    shift_image,
    threshold_mask,
)


# ---------------------------------------------------------------- oracles

def conv_brute(img, kernel):
    """Direct double sum: out[n] = sum_m img[m] * kernel_c[n - m] (periodic),
    where kernel_c re-indexes the kernel relative to its centre pixel."""
    n0, n1 = img.shape
    c0, c1 = n0 // 2, n1 // 2
    out = np.zeros_like(img, dtype=float)
    for i in range(n0):
        for j in range(n1):
            acc = 0.0
            for k in range(n0):
                for l in range(n1):
                    ki = (i - k + c0) % n0
                    kj = (j - l + c1) % n1
                    acc += img[k, l] * kernel[ki, kj]
            out[i, j] = acc
    return out


def median_brute(img, size):
    """Sort-and-pick with replicate padding."""
    r = size // 2
    padded = np.pad(img, r, mode="edge")
    out = np.empty_like(img, dtype=float)
    for i in range(img.shape[0]):
        for j in range(img.shape[1]):
            block = padded[i : i + size, j : j + size].ravel()
            out[i, j] = np.sort(block)[block.size // 2]
    return out


def dilate_brute(mask, radius):
    """Neighborhood max over a (2r+1)^2 square, zero outside."""
    n0, n1 = mask.shape
    out = np.zeros_like(mask)
    for i in range(n0):
        for j in range(n1):
            i0, i1 = max(0, i - radius), min(n0, i + radius + 1)
            j0, j1 = max(0, j - radius), min(n1, j + radius + 1)
            out[i, j] = mask[i0:i1, j0:j1].max()
    return out


def flood_fill(mask, seed):
    """8-connected flood fill from the seed."""
    out = np.zeros_like(mask)
    if mask[seed] == 0:
        return out
    stack = [seed]
    out[seed] = 1
    while stack:
        i, j = stack.pop()
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                ni, nj = i + di, j + dj
                if (
                    0 <= ni < mask.shape[0]
                    and 0 <= nj < mask.shape[1]
                    and mask[ni, nj] == 1
                    and out[ni, nj] == 0
                ):
                    out[ni, nj] = 1
                    stack.append((ni, nj))
    return out


# ---------------------------------------------------------------- convolve

def test_convolve_identity_kernel():
    rng = np.random.default_rng(10)
    img = rng.normal(size=(12, 9))
    kernel = np.zeros((12, 9))
    kernel[grid_center(kernel.shape)] = 1.0
    assert_allclose(convolve(img, kernel), img, atol=1e-12)


def test_convolve_matches_brute_force_8x8():
    rng = np.random.default_rng(11)
    img = rng.normal(size=(8, 8))
    kernel = rng.normal(size=(8, 8))
    assert_allclose(convolve(img, kernel), conv_brute(img, kernel), atol=1e-10)


def test_convolve_matches_brute_force_odd_shape():
    rng = np.random.default_rng(12)
    img = rng.normal(size=(7, 5))
    kernel = rng.normal(size=(7, 5))
    assert_allclose(convolve(img, kernel), conv_brute(img, kernel), atol=1e-10)


def test_convolve_commutes_and_preserves_sums():
    rng = np.random.default_rng(13)
    a = rng.normal(size=(16, 16))
    b = rng.normal(size=(16, 16))
    ab = convolve(a, b)
    assert_allclose(ab, convolve(b, a), atol=1e-10)
    assert_allclose(ab.sum(), a.sum() * b.sum(), rtol=1e-12)


def test_convolve_linearity():
    rng = np.random.default_rng(14)
    a, b, k = (rng.normal(size=(10, 10)) for _ in range(3))
    lhs = convolve(2.5 * a - 1.5 * b, k)
    rhs = 2.5 * convolve(a, k) - 1.5 * convolve(b, k)
    assert_allclose(lhs, rhs, atol=1e-10)


def test_convolver_adjoint_dot_product_identity():
    rng = np.random.default_rng(15)
    k = rng.normal(size=(9, 11))
    x = rng.normal(size=(9, 11))
    y = rng.normal(size=(9, 11))
    conv = Convolver(k)
    lhs = np.vdot(conv.forward(x), y)
    rhs = np.vdot(x, conv.adjoint(y))
    assert abs(lhs - rhs) < 1e-9
    assert_allclose(convolve_adjoint(y, k), conv.adjoint(y), atol=1e-12)


def test_convolve_shape_mismatch_raises():
    with pytest.raises(ValueError):
        convolve(np.zeros((4, 4)), np.zeros((5, 5)))


def test_convolve_non_finite_raises():
    img = np.zeros((4, 4))
    img[0, 0] = np.nan
    with pytest.raises(ValueError):
        convolve(img, np.ones((4, 4)))


# ------------------------------------------------------------ finite_diff

def test_finite_diff_matches_index_shift():
    rng = np.random.default_rng(16)
    v = rng.normal(size=(6, 6))
    d1 = finite_diff(v, 1)
    d2 = finite_diff(v, 2)
    for i in range(6):
        for j in range(6):
            assert d1[i, j] == pytest.approx(v[(i + 1) % 6, j] - v[i, j])
            assert d2[i, j] == pytest.approx(v[i, (j + 1) % 6] - v[i, j])


def test_finite_diff_constant_is_zero():
    assert_array_equal(finite_diff(np.full((5, 7), 3.2), 1), np.zeros((5, 7)))


def test_finite_diff_adjoint_identity():
    rng = np.random.default_rng(17)
    x = rng.normal(size=(8, 6))
    y = rng.normal(size=(8, 6))
    for axis in (1, 2):
        lhs = np.vdot(finite_diff(x, axis), y)
        rhs = np.vdot(x, finite_diff_adjoint(y, axis))
        assert abs(lhs - rhs) < 1e-10


def test_finite_diff_bad_axis():
    with pytest.raises(ValueError):
        finite_diff(np.zeros((4, 4)), 0)


# ---------------------------------------------------------- median_filter

def test_median_filter_matches_sort_oracle():
    rng = np.random.default_rng(18)
    img = rng.normal(size=(10, 12))
    for size in (3, 5):
        assert_allclose(median_filter(img, size), median_brute(img, size))


def test_median_filter_replicate_border():
    img = np.zeros((6, 6))
    img[0, :] = 5.0
    out = median_filter(img, 3)
    # replicate padding keeps the top row to a majority of 5s
    assert_array_equal(out[0, 1:5], np.full(4, 5.0))


def test_median_filter_even_size_raises():
    with pytest.raises(ValueError):
        median_filter(np.zeros((5, 5)), 4)


# --------------------------------------------------------- threshold_mask

def test_threshold_mask_inclusive_boundary():
    img = np.array([[0.0, 1.0], [2.0, 3.0]])
    mask = threshold_mask(img, 2.0)
    assert_array_equal(mask, np.array([[0, 0], [1, 1]], dtype=np.uint8))


def test_threshold_mask_dtype_and_values():
    rng = np.random.default_rng(19)
    img = rng.normal(size=(7, 7))
    mask = threshold_mask(img, 0.0)
    assert mask.dtype == np.uint8
    assert set(np.unique(mask)) <= {0, 1}
    assert_array_equal(mask, (img >= 0.0).astype(np.uint8))


# ------------------------------------------------------------------ dilate

def test_dilate_matches_neighborhood_max():
    rng = np.random.default_rng(20)
    mask = (rng.random((12, 9)) < 0.2).astype(np.uint8)
    for radius in (1, 2, 3):
        assert_array_equal(dilate(mask, radius), dilate_brute(mask, radius))


def test_dilate_radius_zero_is_identity():
    rng = np.random.default_rng(21)
    mask = (rng.random((8, 8)) < 0.3).astype(np.uint8)
    assert_array_equal(dilate(mask, 0), mask)


def test_dilate_rejects_non_binary():
    with pytest.raises(ValueError):
        dilate(np.full((4, 4), 2.0), 1)


# ------------------------------------------------------------- shift_image

def test_shift_image_integer_shift_matches_index_copy():
    rng = np.random.default_rng(22)
    img = np.zeros((16, 16))
    img[4:12, 4:12] = rng.normal(size=(8, 8))
    out = shift_image(img, 2, -1)
    expected = np.zeros_like(img)
    expected[6:14, 3:11] = img[4:12, 4:12]
    assert_allclose(out[1:-1, 1:-1], expected[1:-1, 1:-1], atol=1e-9)


def test_shift_image_subpixel_cosine():
    n = 64
    x = np.arange(n)
    wave = np.cos(2 * np.pi * x / n * 3.0)
    img = np.tile(wave, (n, 1))
    out = shift_image(img, 0.0, 0.5)
    expected = np.tile(np.cos(2 * np.pi * (x - 0.5) / n * 3.0), (n, 1))
    interior = (slice(4, -4), slice(4, -4))
    err = np.abs(out[interior] - expected[interior]).max()
    assert err < 0.02  # of unit peak


def test_shift_image_zero_fill():
    img = np.ones((8, 8))
    out = shift_image(img, 3, 0)
    assert_allclose(out[:2, :], np.zeros((2, 8)), atol=1e-7)


# -------------------------------------------------- connected_component_of

def test_connected_component_matches_flood_fill():
    rng = np.random.default_rng(23)
    mask = (rng.random((15, 15)) < 0.45).astype(np.uint8)
    seeds = np.argwhere(mask == 1)
    seed = tuple(seeds[0])
    assert_array_equal(
        connected_component_of(mask, seed), flood_fill(mask, seed)
    )


def test_connected_component_diagonal_counts():
    mask = np.zeros((5, 5), dtype=np.uint8)
    mask[1, 1] = mask[2, 2] = mask[3, 3] = 1
    out = connected_component_of(mask, (1, 1))
    assert out.sum() == 3


def test_connected_component_seed_off_returns_zeros():
    mask = np.zeros((4, 4), dtype=np.uint8)
    mask[0, 0] = 1
    assert connected_component_of(mask, (2, 2)).sum() == 0


def test_connected_component_seed_out_of_bounds():
    with pytest.raises(ValueError):
        connected_component_of(np.ones((4, 4), dtype=np.uint8), (9, 0))
