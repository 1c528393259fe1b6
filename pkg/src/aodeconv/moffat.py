"""Elliptical Moffat profile: evaluation, fitting, radial averaging.

The profile is gamma * (1 + r1^2/alpha1^2 + r2^2/alpha2^2)^(-beta) where
(r1, r2) are coordinates rotated by theta about the centre (x0, y0).
It has heavier tails than a Gaussian and degrades gracefully toward one
as beta grows, which makes it the standard parametric stand-in for a
partially corrected point-source core.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, asdict, replace

import numpy as np

from .image import as_image
from .simplex import simplex_search

_FIELDS = ("x0", "y0", "alpha1", "alpha2", "beta", "theta", "gamma")


def _wrap_theta(theta: float) -> float:
    """Wrap an orientation angle into [-pi/2, pi/2)."""
    return (theta + math.pi / 2.0) % math.pi - math.pi / 2.0


@dataclass(frozen=True)
class MoffatParams:
    """Seven scalars describing one elliptical Moffat profile."""

    x0: float
    y0: float
    alpha1: float
    alpha2: float
    beta: float
    theta: float
    gamma: float

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "beta", "gamma"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")
        for name in ("x0", "y0", "theta"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        object.__setattr__(self, "theta", _wrap_theta(self.theta))

    def canonical(self) -> "MoffatParams":
        """Gauge-fixed copy: alpha1 >= alpha2, theta in [-pi/2, pi/2).

        Swapping the two widths while rotating by 90 degrees leaves the
        profile unchanged; this picks one representative.
        """
        if self.alpha1 >= self.alpha2:
            return self
        return replace(
            self,
            alpha1=self.alpha2,
            alpha2=self.alpha1,
            theta=_wrap_theta(self.theta + math.pi / 2.0),
        )

    def fwhm(self) -> float:
        """Full width at half maximum along the geometric-mean axis."""
        scale = 2.0 * math.sqrt(2.0 ** (1.0 / self.beta) - 1.0)
        return scale * math.sqrt(self.alpha1 * self.alpha2)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MoffatParams":
        obj = json.loads(text)
        missing = [k for k in _FIELDS if k not in obj]
        if missing:
            raise ValueError(f"missing fields: {missing}")
        return cls(**{k: float(obj[k]) for k in _FIELDS})


def moffat_eval(shape, p: MoffatParams) -> np.ndarray:
    """Evaluate the profile on an (n0, n1) pixel grid."""
    n0, n1 = int(shape[0]), int(shape[1])
    if n0 < 1 or n1 < 1:
        raise ValueError(f"bad shape {shape}")
    x1 = np.arange(n0, dtype=np.float64)[:, None] - p.x0
    x2 = np.arange(n1, dtype=np.float64)[None, :] - p.y0
    c, s = math.cos(p.theta), math.sin(p.theta)
    r1 = x1 * c + x2 * s
    r2 = -x1 * s + x2 * c
    arg = 1.0 + (r1 / p.alpha1) ** 2 + (r2 / p.alpha2) ** 2
    return p.gamma * arg ** (-p.beta)


def _params_to_vec(p: MoffatParams) -> np.ndarray:
    return np.array(
        [
            p.x0,
            p.y0,
            math.log(p.alpha1),
            math.log(p.alpha2),
            math.log(p.beta),
            p.theta,
            math.log(p.gamma),
        ]
    )


def _vec_to_params(v) -> MoffatParams:
    return MoffatParams(
        x0=float(v[0]),
        y0=float(v[1]),
        alpha1=math.exp(float(np.clip(v[2], -50, 50))),
        alpha2=math.exp(float(np.clip(v[3], -50, 50))),
        beta=math.exp(float(np.clip(v[4], -50, 50))),
        theta=float(v[5]),
        gamma=math.exp(float(np.clip(v[6], -500, 500))),
    )


def _moments_init(img: np.ndarray) -> MoffatParams:
    w = np.maximum(img, 0.0)
    total = w.sum()
    if total <= 0:
        raise ValueError("image has no positive flux to fit")
    i = np.arange(img.shape[0], dtype=np.float64)
    j = np.arange(img.shape[1], dtype=np.float64)
    x0 = float((w.sum(axis=1) * i).sum() / total)
    y0 = float((w.sum(axis=0) * j).sum() / total)
    var0 = float((w.sum(axis=1) * (i - x0) ** 2).sum() / total)
    var1 = float((w.sum(axis=0) * (j - y0) ** 2).sum() / total)
    width = math.sqrt(max(min(var0, var1), 0.25))
    return MoffatParams(
        x0=x0,
        y0=y0,
        alpha1=width,
        alpha2=width,
        beta=1.6,
        theta=0.0,
        gamma=max(float(img.max()), 1e-30),
    )


def fit_moffat_to_image(psf, max_iter: int = 4000) -> MoffatParams:
    """Least-squares Moffat fit to an image via simplex search.

    Starts from image moments.  When the iteration budget is exhausted
    before the search settles, the best parameters so far are returned
    and a RuntimeWarning is emitted.
    """
    img = as_image(psf, "psf")
    init = _moments_init(img)

    def objective(vec):
        resid = img - moffat_eval(img.shape, _vec_to_params(vec))
        return float(np.dot(resid.ravel(), resid.ravel()))

    v0 = _params_to_vec(init)
    best = simplex_search(objective, v0, max_iter)
    # second pass from the first result; cheap insurance against the
    # simplex collapsing early in a 7-parameter landscape
    best = simplex_search(objective, best, max_iter)
    f_best = objective(best)
    probe = best * (1.0 + 1e-4) + 1e-6
    if objective(probe) < f_best:
        warnings.warn(
            "moffat fit did not converge within the iteration budget",
            RuntimeWarning,
        )
    return _vec_to_params(best).canonical()


def radial_profile(img, center, n_bins: int):
    """Azimuthally averaged profile about a (possibly sub-pixel) centre.

    Returns (radii, means): per-bin mean pixel radius and mean intensity
    for the non-empty bins among n_bins equal-width annuli spanning the
    largest centre-to-pixel distance.
    """
    a = as_image(img)
    if n_bins < 1:
        raise ValueError(f"n_bins must be >= 1, got {n_bins}")
    cx, cy = float(center[0]), float(center[1])
    i = np.arange(a.shape[0], dtype=np.float64)[:, None] - cx
    j = np.arange(a.shape[1], dtype=np.float64)[None, :] - cy
    r = np.hypot(i, j).ravel()
    v = a.ravel()
    r_max = float(r.max())
    if r_max <= 0:
        return np.array([0.0]), np.array([float(v.mean())])
    edges = np.linspace(0.0, r_max * (1 + 1e-12), n_bins + 1)
    idx = np.clip(np.digitize(r, edges) - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    keep = counts > 0
    sums_v = np.bincount(idx, weights=v, minlength=n_bins)
    sums_r = np.bincount(idx, weights=r, minlength=n_bins)
    return (sums_r[keep] / counts[keep], sums_v[keep] / counts[keep])
