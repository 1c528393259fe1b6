"""Dense 2-D image primitives shared by every stage of the package.

Images are float64 numpy arrays of shape (n0, n1).  Positions are (x, y)
pairs with x along axis 0 and y along axis 1.  Convolution is circular
(periodic boundaries) with the kernel's nominal centre at the grid centre
pixel (n0 // 2, n1 // 2), so a centred unit impulse is the identity kernel.
"""

from __future__ import annotations

import numpy as np
import scipy.ndimage as ndi
from scipy import fft as sfft

__all__ = [
    "grid_center",
    "Convolver",
    "convolve",
    "convolve_adjoint",
    "finite_diff",
    "finite_diff_adjoint",
    "median_filter",
    "threshold_mask",
    "dilate",
    "shift_image",
    "connected_component_of",
]


def as_image(arr, name: str = "image") -> np.ndarray:
    """Coerce to a finite float64 2-D array or raise ValueError."""
    out = np.asarray(arr, dtype=np.float64)
    if out.ndim != 2 or out.shape[0] < 1 or out.shape[1] < 1:
        raise ValueError(f"{name} must be 2-D, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite values")
    return out


def as_mask(arr, name: str = "mask") -> np.ndarray:
    """Coerce to a uint8 array of zeros and ones or raise ValueError."""
    out = np.asarray(arr)
    if out.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {out.shape}")
    if out.dtype == bool:
        return out.astype(np.uint8)
    vals = np.unique(out)
    if not np.all(np.isin(vals, (0, 1))):
        raise ValueError(f"{name} must contain only 0 and 1")
    return out.astype(np.uint8)


def grid_center(shape) -> tuple[int, int]:
    """Centre pixel used as the nominal kernel origin."""
    return (shape[0] // 2, shape[1] // 2)


class Convolver:
    """Circular convolution by a fixed grid-centred kernel, FFT cached.

    Meant for repeated forward/adjoint applications inside iterative
    solvers; the kernel transform is computed once at construction.
    """

    def __init__(self, kernel):
        k = as_image(kernel, "kernel")
        self.shape = k.shape
        self._tf = sfft.rfft2(sfft.ifftshift(k))

    def forward(self, img: np.ndarray) -> np.ndarray:
        if img.shape != self.shape:
            raise ValueError(
                f"image shape {img.shape} != kernel shape {self.shape}"
            )
        return sfft.irfft2(sfft.rfft2(img) * self._tf, s=self.shape)

    def adjoint(self, img: np.ndarray) -> np.ndarray:
        if img.shape != self.shape:
            raise ValueError(
                f"image shape {img.shape} != kernel shape {self.shape}"
            )
        return sfft.irfft2(sfft.rfft2(img) * np.conj(self._tf), s=self.shape)


def convolve(img, kernel) -> np.ndarray:
    """Circular convolution of img with a grid-centred kernel.

    Both arrays must share the same shape.  Linear in both arguments,
    commutative, and preserves the product of the sums.
    """
    a = as_image(img)
    k = as_image(kernel, "kernel")
    if a.shape != k.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {k.shape}")
    return Convolver(k).forward(a)


def convolve_adjoint(img, kernel) -> np.ndarray:
    """Adjoint of convolve(., kernel), i.e. circular correlation."""
    a = as_image(img)
    k = as_image(kernel, "kernel")
    if a.shape != k.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {k.shape}")
    return Convolver(k).adjoint(a)


def finite_diff(img, axis: int) -> np.ndarray:
    """Forward difference along spatial axis 1 or 2, periodic wrap."""
    a = as_image(img)
    if axis not in (1, 2):
        raise ValueError(f"axis must be 1 or 2, got {axis}")
    return np.roll(a, -1, axis=axis - 1) - a


def finite_diff_adjoint(img, axis: int) -> np.ndarray:
    """Adjoint of finite_diff along the same axis (negative divergence)."""
    a = as_image(img)
    if axis not in (1, 2):
        raise ValueError(f"axis must be 1 or 2, got {axis}")
    return np.roll(a, 1, axis=axis - 1) - a


def median_filter(img, size: int) -> np.ndarray:
    """Square median filter with replicate padding at the borders."""
    a = as_image(img)
    if size < 1 or size % 2 == 0:
        raise ValueError(f"size must be odd and >= 1, got {size}")
    return ndi.median_filter(a, size=size, mode="nearest")


def threshold_mask(img, thresh: float) -> np.ndarray:
    """Binary mask of pixels with value >= thresh (inclusive)."""
    a = as_image(img)
    if not np.isfinite(thresh):
        raise ValueError("threshold must be finite")
    return (a >= thresh).astype(np.uint8)


def dilate(mask, radius: int) -> np.ndarray:
    """Binary dilation by a full square of half-width `radius` pixels."""
    m = as_mask(mask)
    if radius < 0 or int(radius) != radius:
        raise ValueError(f"radius must be a non-negative integer, got {radius}")
    radius = int(radius)
    if radius == 0:
        return m.copy()
    se = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    return ndi.binary_dilation(m.astype(bool), structure=se).astype(np.uint8)


def shift_image(img, dx: float, dy: float) -> np.ndarray:
    """Translate by (dx, dy) pixels with cubic interpolation, zero fill.

    output[i, j] samples input[i - dx, j - dy]; pixels sampled outside
    the grid are filled with 0.  Integer shifts reproduce index-shifted
    copies on interior content.
    """
    a = as_image(img)
    if not (np.isfinite(dx) and np.isfinite(dy)):
        raise ValueError("shift offsets must be finite")
    return ndi.shift(a, (dx, dy), order=3, mode="grid-constant", cval=0.0)


def connected_component_of(mask, seed: tuple[int, int]) -> np.ndarray:
    """8-connected component of `mask` containing `seed`, as a mask.

    Returns all zeros when the seed pixel itself is off.
    """
    m = as_mask(mask)
    i, j = int(seed[0]), int(seed[1])
    if not (0 <= i < m.shape[0] and 0 <= j < m.shape[1]):
        raise ValueError(f"seed {seed} outside grid {m.shape}")
    if m[i, j] == 0:
        return np.zeros_like(m)
    labels, _ = ndi.label(m, structure=np.ones((3, 3), dtype=int))
    return (labels == labels[i, j]).astype(np.uint8)
