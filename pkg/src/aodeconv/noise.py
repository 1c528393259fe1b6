"""Empirical two-parameter noise model fit from a single frame.

Pixel variance is modelled as eta * intensity + v_ron: a gain-like
shot-noise slope plus a constant readout floor.  Both parameters are
estimated from the frame itself by comparing local intensity against
local high-frequency variance over annular arcs, with an L1 affine fit
and iterative 3-sigma re-validation so that arcs contaminated by steep
gradients or artifacts drop out.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .image import as_image, median_filter

_MAD_TO_SIGMA = 1.4826


@dataclass(frozen=True)
class NoiseModel:
    """Affine variance law var = eta * intensity + v_ron."""

    eta: float
    v_ron: float

    def __post_init__(self):
        if not (np.isfinite(self.eta) and self.eta >= 0):
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if not (np.isfinite(self.v_ron) and self.v_ron >= 0):
            raise ValueError(f"v_ron must be >= 0, got {self.v_ron}")
        if self.eta == 0 and self.v_ron == 0:
            raise ValueError("eta and v_ron cannot both be zero")

    def to_json(self) -> str:
        return json.dumps({"eta": self.eta, "v_ron": self.v_ron}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "NoiseModel":
        obj = json.loads(text)
        try:
            return cls(eta=float(obj["eta"]), v_ron=float(obj["v_ron"]))
        except KeyError as exc:
            raise ValueError(f"missing noise model field: {exc}") from exc


@dataclass(frozen=True)
class ArcStats:
    """Summary statistics of one annular arc."""

    mean: float
    variance: float
    n_pixels: int


def weights_from_intensity(intensity, model: NoiseModel) -> np.ndarray:
    """Per-pixel statistical weights 1 / (eta * I + v_ron).

    Negative intensities are clamped to zero before applying the law.
    """
    img = as_image(intensity, "intensity")
    var = model.eta * np.maximum(img, 0.0) + model.v_ron
    if np.min(var) <= 0:
        raise ValueError("variance law is non-positive somewhere on the frame")
    return 1.0 / var


def arc_statistics(
    data,
    noise_map,
    center,
    arc_width: float = 5.0,
    arc_length: float = 20.0,
    min_pixels: int = 10,
) -> list[ArcStats]:
    """Partition the frame into annular arcs and summarize each one.

    Rings of radial width `arc_width` centred on `center` are cut into
    azimuthal pieces of roughly `arc_length` pixels along the ring.
    Arcs with fewer than `min_pixels` pixels are dropped.
    """
    d = as_image(data)
    n = as_image(noise_map, "noise_map")
    if d.shape != n.shape:
        raise ValueError(f"shape mismatch: {d.shape} vs {n.shape}")
    if arc_width <= 0 or arc_length <= 0:
        raise ValueError("arc dimensions must be positive")
    cx, cy = float(center[0]), float(center[1])
    i = np.arange(d.shape[0], dtype=np.float64)[:, None] - cx
    j = np.arange(d.shape[1], dtype=np.float64)[None, :] - cy
    r = np.hypot(i, j)
    phi = np.arctan2(j, i)

    ring = (r / arc_width).astype(np.int64)
    stats: list[ArcStats] = []
    for k in range(int(ring.max()) + 1):
        sel = ring == k
        if not np.any(sel):
            continue
        r_mid = arc_width * (k + 0.5)
        n_az = max(1, int(round(2.0 * np.pi * r_mid / arc_length)))
        az = np.floor((phi[sel] + np.pi) / (2.0 * np.pi) * n_az)
        az = np.clip(az, 0, n_az - 1).astype(np.int64)
        dv = d[sel]
        nv = n[sel]
        for a in range(n_az):
            pick = az == a
            count = int(pick.sum())
            if count < min_pixels:
                continue
            stats.append(
                ArcStats(
                    mean=float(dv[pick].mean()),
                    variance=float(nv[pick].var(ddof=1)),
                    n_pixels=count,
                )
            )
    return stats


def _weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    order = np.argsort(values, kind="stable")
    v = values[order]
    w = weights[order]
    cum = np.cumsum(w)
    idx = int(np.searchsorted(cum, 0.5 * cum[-1]))
    return float(v[min(idx, len(v) - 1)])


def _l1_affine(x: np.ndarray, y: np.ndarray, eps: float, n_iter: int):
    """Smoothed-IRLS L1 fit of y ~ slope * x + intercept."""
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    for _ in range(n_iter):
        resid = y - A @ coef
        w = 1.0 / np.sqrt(resid * resid + eps * eps)
        sw = np.sqrt(w)
        coef, *_ = np.linalg.lstsq(A * sw[:, None], y * sw, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    # non-negativity of both parameters, with an exact 1-D L1 refit of
    # whichever parameter remains free after a clip
    if slope < 0 and intercept < 0:
        return 0.0, 0.0
    if slope < 0:
        return 0.0, max(float(np.median(y)), 0.0)
    if intercept < 0:
        pos = x > 0
        if np.any(pos):
            slope = _weighted_median(y[pos] / x[pos], np.abs(x[pos]))
        return max(slope, 0.0), 0.0
    return slope, intercept


def robust_affine_fit(
    means,
    variances,
    n_rounds: int = 10,
    n_irls: int = 50,
    mad_history: list | None = None,
) -> NoiseModel:
    """Outlier-resistant affine fit of variance against mean intensity.

    Alternates an L1 affine fit on the currently valid points with a
    3-sigma re-validation over all points, sigma being 1.4826 times the
    median absolute residual of the valid set.  When `mad_history` is a
    list, the per-round median absolute residual of the valid set is
    appended to it (diagnostic hook).
    """
    x = np.asarray(means, dtype=np.float64).ravel()
    y = np.asarray(variances, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValueError("means and variances must have equal length")
    if x.size < 3:
        raise ValueError(f"insufficient arcs: need >= 3, got {x.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite arc statistics")
    span = float(x.max() - x.min())
    if span <= 1e-12 * max(abs(float(x.max())), 1.0):
        raise ValueError("degenerate arcs: all means identical")

    eps = 1e-8 * max(float(np.median(y)), 1e-300)
    valid = np.ones(x.size, dtype=bool)
    slope, intercept = 0.0, float(np.median(y))
    for _ in range(n_rounds):
        if valid.sum() < 3:
            break
        slope, intercept = _l1_affine(x[valid], y[valid], eps, n_irls)
        resid = y - (slope * x + intercept)
        mad = float(np.median(np.abs(resid[valid])))
        if mad_history is not None:
            mad_history.append(mad)
        sigma = _MAD_TO_SIGMA * mad
        if sigma <= 0:
            break  # exact fit; nothing left to re-validate
        valid = np.abs(resid) < 3.0 * sigma
    return NoiseModel(eta=slope, v_ron=intercept)


def fit_noise_model(
    data,
    center=None,
    arc_width: float = 5.0,
    arc_length: float = 20.0,
) -> NoiseModel:
    """Estimate (eta, v_ron) from a single frame.

    The high-frequency noise map is the frame minus its 5x5 median
    filter; arcs are annular pieces centred on `center` (defaults to
    the intensity-weighted centroid).
    """
    d = as_image(data)
    if min(d.shape) < 4 * arc_width:
        raise ValueError(
            f"frame {d.shape} too small for arc width {arc_width}"
        )
    if center is None:
        w = np.maximum(d, 0.0)
        tot = w.sum()
        if tot <= 0:
            raise ValueError("cannot locate object: no positive flux")
        i = np.arange(d.shape[0], dtype=np.float64)
        j = np.arange(d.shape[1], dtype=np.float64)
        center = (
            float((w.sum(axis=1) * i).sum() / tot),
            float((w.sum(axis=0) * j).sum() / tot),
        )
    noise_map = d - median_filter(d, 5)
    stats = arc_statistics(d, noise_map, center, arc_width, arc_length)
    if len(stats) < 3:
        raise ValueError(f"insufficient arcs: got {len(stats)}")
    means = np.array([s.mean for s in stats])
    variances = np.array([s.variance for s in stats])
    return robust_affine_fit(means, variances)
