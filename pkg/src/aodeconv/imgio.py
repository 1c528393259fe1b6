"""Flat raster file I/O.

The native format ("IMG1") is deliberately dumb: a 4-byte magic, two
little-endian uint32 giving width and height, then width*height float64
values in row-major order.  Width is the length of a row (axis 1).

For quick looks there is a 16-bit binary PGM exporter with a choice of
intensity stretch.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .image import as_image

MAGIC = b"IMG1"
_HEADER = struct.Struct("<4sII")


def write_img1(path, img) -> None:
    a = as_image(img)
    height, width = a.shape
    payload = _HEADER.pack(MAGIC, width, height) + a.astype("<f8").tobytes()
    Path(path).write_bytes(payload)


def read_img1(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, width, height = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if width < 1 or height < 1:
        raise ValueError(f"{path}: bad dimensions {width}x{height}")
    expected = _HEADER.size + 8 * width * height
    if len(raw) != expected:
        raise ValueError(
            f"{path}: expected {expected} bytes for {width}x{height}, "
            f"got {len(raw)}"
        )
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    img = data.reshape(height, width).astype(np.float64)
    if not np.all(np.isfinite(img)):
        raise ValueError(f"{path}: non-finite pixel values")
    return img


def write_pgm(
    path,
    img,
    stretch: str = "linear",
    vmin: float | None = None,
    vmax: float | None = None,
    pivot: float | None = None,
) -> None:
    """Export as 16-bit binary PGM with an intensity stretch.

    stretch:
      "linear"  map [vmin, vmax] linearly onto [0, 65535]
      "sqrt"    same after a square-root transform of (v - vmin)
      "dual"    two linear ranges: [vmin, pivot] onto the lower half of
                the output range and [pivot, vmax] onto the upper half,
                useful when a faint halo and a bright body must both
                stay visible.  pivot defaults to vmin + 10% of the span.
    """
    a = as_image(img)
    lo = float(np.min(a)) if vmin is None else float(vmin)
    hi = float(np.max(a)) if vmax is None else float(vmax)
    if not hi > lo:
        hi = lo + 1.0
    clipped = np.clip(a, lo, hi)

    if stretch == "linear":
        norm = (clipped - lo) / (hi - lo)
        out = norm * 65535.0
    elif stretch == "sqrt":
        norm = np.sqrt(clipped - lo) / np.sqrt(hi - lo)
        out = norm * 65535.0
    elif stretch == "dual":
        p = lo + 0.1 * (hi - lo) if pivot is None else float(pivot)
        if not lo < p < hi:
            raise ValueError(f"pivot {p} outside ({lo}, {hi})")
        low = clipped <= p
        out = np.empty_like(clipped)
        out[low] = (clipped[low] - lo) / (p - lo) * 32767.0
        out[~low] = 32768.0 + (clipped[~low] - p) / (hi - p) * 32767.0
    else:
        raise ValueError(f"unknown stretch {stretch!r}")

    pixels = np.round(out).astype(">u2")
    height, width = a.shape
    header = f"P5\n{width} {height}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())
