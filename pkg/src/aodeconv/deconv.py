"""Weighted, regularized deconvolution of object and PSF.

Both inverse problems share one machinery: a weighted least-squares
data term under a fixed convolution operator, a smoothness prior, and a
projected limited-memory quasi-Newton solver honouring lower bounds.
The object prior is an edge-preserving total-variation form; the PSF
prior penalizes gradients of the log image, which whitens the enormous
dynamic range between the core and the faint wings and is invariant
under a global rescale of the PSF.

Outlier handling enters through the weights only: a Cauchy M-estimator
maps whitened residuals to multiplicative weights in (0, 1], and pixels
whose weight falls under a threshold can be excluded outright by the
caller (see the pipeline module).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .image import (
    Convolver,
    as_image,
    finite_diff,
    finite_diff_adjoint,
)

# Cauchy scale at which the robust and least-squares estimators agree
# for Gaussian residuals.
GAMMA_GAUSS_EQUIV = 2.385


@dataclass(frozen=True)
class RobustConfig:
    """Cauchy weighting and exclusion thresholds.

    threshold_body applies inside the protected object vicinity, where
    only gross outliers (dead/saturated pixels, cosmic rays) should be
    dropped; set it to 0 to never exclude protected pixels.
    """

    gamma: float = GAMMA_GAUSS_EQUIV
    threshold: float = 0.5
    threshold_body: float = 0.02

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not (0 <= self.threshold < 1):
            raise ValueError(f"threshold must be in [0, 1), got {self.threshold}")
        if not (0 <= self.threshold_body <= 0.1):
            raise ValueError(
                f"threshold_body must be in [0, 0.1], got {self.threshold_body}"
            )


@dataclass(frozen=True)
class DeconvConfig:
    """Hyperparameters of the alternating deconvolution."""

    mu_obj: float = 1.0
    eps_obj: float = 1.0
    mu_psf: float = 1.0
    h_min_frac: float = 1e-12
    n_alt: int = 30
    n_wgt: int = 5
    max_iter: int = 1000

    def __post_init__(self):
        if self.mu_obj < 0 or self.mu_psf < 0:
            raise ValueError("regularization weights must be >= 0")
        if self.eps_obj <= 0:
            raise ValueError(f"eps_obj must be positive, got {self.eps_obj}")
        if not (0 < self.h_min_frac < 1):
            raise ValueError(f"h_min_frac must be in (0, 1), got {self.h_min_frac}")
        if self.n_alt < 1:
            raise ValueError(f"n_alt must be >= 1, got {self.n_alt}")
        if not (0 <= self.n_wgt <= self.n_alt):
            raise ValueError(
                f"n_wgt must be in [0, n_alt={self.n_alt}], got {self.n_wgt}"
            )
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")


def wls_cost_grad(a, b, weights):
    """0.5 * sum(w * (a - b)^2) and its gradient with respect to b."""
    resid = np.asarray(b, dtype=np.float64) - np.asarray(a, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if np.min(w) < 0:
        raise ValueError("weights must be non-negative")
    wr = w * resid
    return 0.5 * float(np.sum(wr * resid)), wr


def cauchy_rho(r, gamma: float = GAMMA_GAUSS_EQUIV):
    """Cauchy penalty 0.5 * gamma^2 * ln(1 + (r/gamma)^2)."""
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    r = np.asarray(r, dtype=np.float64)
    return 0.5 * gamma * gamma * np.log1p((r / gamma) ** 2)


def cauchy_weight(r, gamma: float = GAMMA_GAUSS_EQUIV):
    """Multiplicative robust weight 1 / (1 + (r/gamma)^2), in (0, 1]."""
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    r = np.asarray(r, dtype=np.float64)
    return 1.0 / (1.0 + (r / gamma) ** 2)


def robust_cost(a, b, weights, gamma: float = GAMMA_GAUSS_EQUIV) -> float:
    """Sum of Cauchy penalties of the whitened residuals sqrt(w)*(a-b)."""
    w = np.asarray(weights, dtype=np.float64)
    if np.min(w) < 0:
        raise ValueError("weights must be non-negative")
    resid = np.sqrt(w) * (
        np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    )
    return float(np.sum(cauchy_rho(resid, gamma)))


def reg_obj_cost_grad(obj, eps: float):
    """Edge-preserving smoothness: sum sqrt(|grad|^2 + eps^2) - eps.

    Quadratic for gradients well below eps (noise smoothing), linear
    above (edges cost their height, not its square).
    """
    if not (np.isfinite(eps) and eps > 0):
        raise ValueError(f"eps must be positive, got {eps}")
    o = as_image(obj, "object")
    d1 = finite_diff(o, 1)
    d2 = finite_diff(o, 2)
    s = np.sqrt(d1 * d1 + d2 * d2 + eps * eps)
    cost = float(np.sum(s - eps))
    grad = finite_diff_adjoint(d1 / s, 1) + finite_diff_adjoint(d2 / s, 2)
    return cost, grad


def reg_psf_cost_grad(psf, h_min: float):
    """Quadratic smoothness of the log PSF: sum |grad ln h|^2.

    Working on ln(max(h, h_min)) whitens the dynamic range, so the faint
    wings are smoothed as strongly, relatively, as the bright core, and
    the penalty is exactly invariant under h -> c*h.
    """
    if not (np.isfinite(h_min) and h_min > 0):
        raise ValueError(f"h_min must be positive, got {h_min}")
    h = as_image(psf, "psf")
    hc = np.maximum(h, h_min)
    u = np.log(hc)
    d1 = finite_diff(u, 1)
    d2 = finite_diff(u, 2)
    cost = float(np.sum(d1 * d1 + d2 * d2))
    gu = 2.0 * (finite_diff_adjoint(d1, 1) + finite_diff_adjoint(d2, 2))
    grad = np.where(h > h_min, gu / hc, 0.0)
    return cost, grad


def vmlmb_minimize(
    cost_grad,
    x0,
    lower_bound=None,
    max_iter: int = 1000,
    memory: int = 5,
    rel_tol: float = 1e-9,
    tol_window: int = 5,
) -> np.ndarray:
    """Projected limited-memory BFGS minimization with lower bounds.

    cost_grad maps an array to (cost, gradient).  Every iterate is
    feasible and every accepted step decreases the cost.  Iteration
    stops at max_iter or once the relative cost decrease over the last
    `tol_window` iterations falls below rel_tol.
    """
    x = np.array(x0, dtype=np.float64)
    bounded = lower_bound is not None
    if bounded:
        lb = np.broadcast_to(
            np.asarray(lower_bound, dtype=np.float64), x.shape
        )
        x = np.maximum(x, lb)

    def project(z):
        return np.maximum(z, lb) if bounded else z

    f, g = cost_grad(x)
    f = float(f)
    g = np.asarray(g, dtype=np.float64)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise ValueError("cost or gradient non-finite at the starting point")

    s_list: deque = deque(maxlen=memory)
    y_list: deque = deque(maxlen=memory)
    rho_list: deque = deque(maxlen=memory)
    history = deque([f], maxlen=tol_window + 1)

    def two_loop(grad):
        q = -grad.ravel().copy()
        if not s_list:
            scale = 1.0 / max(float(np.max(np.abs(grad))), 1.0)
            return (q * scale).reshape(grad.shape)
        alphas = []
        for s, y, rho in zip(
            reversed(s_list), reversed(y_list), reversed(rho_list)
        ):
            a = rho * np.dot(s, q)
            alphas.append(a)
            q -= a * y
        s_last, y_last = s_list[-1], y_list[-1]
        q *= np.dot(s_last, y_last) / np.dot(y_last, y_last)
        for (s, y, rho), a in zip(
            zip(s_list, y_list, rho_list), reversed(alphas)
        ):
            b = rho * np.dot(y, q)
            q += (a - b) * s
        return q.reshape(grad.shape)

    for _ in range(max_iter):
        # Components pinned at the bound and pushed outward would only be
        # clipped by the projection; drop them so the quasi-Newton
        # direction lives on the free subspace.
        if bounded:
            gp = np.where((x > lb) | (g < 0), g, 0.0)
        else:
            gp = g
        moved = False
        for attempt in range(2):
            d = two_loop(gp) if attempt == 0 else -gp
            if attempt == 1 and not s_list:
                break  # first direction already was the gradient
            t = 1.0
            for _ls in range(60):
                xt = project(x + t * d)
                step = xt - x
                slope = float(np.dot(g.ravel(), step.ravel()))
                if slope >= 0 or not np.any(step):
                    t *= 0.5
                    continue
                ft, gt = cost_grad(xt)
                ft = float(ft)
                if np.isfinite(ft) and ft <= f + 1e-4 * slope:
                    s_vec = step.ravel()
                    y_vec = (
                        np.asarray(gt, dtype=np.float64) - g
                    ).ravel()
                    sy = float(np.dot(s_vec, y_vec))
                    if sy > 1e-10 * np.linalg.norm(s_vec) * np.linalg.norm(
                        y_vec
                    ):
                        s_list.append(s_vec)
                        y_list.append(y_vec)
                        rho_list.append(1.0 / sy)
                    x, f = xt, ft
                    g = np.asarray(gt, dtype=np.float64)
                    moved = True
                    break
                t *= 0.5
            if moved:
                break
        if not moved:
            break  # no descent even along the projected gradient
        history.append(f)
        if len(history) == tol_window + 1:
            f_old = history[0]
            denom = max(abs(f_old), abs(f), 1e-30)
            if (f_old - f) <= rel_tol * denom:
                break
    return x


def _data_term(conv: Convolver, data, weights):
    def cost_grad_part(x):
        model = conv.forward(x)
        resid = model - data
        wr = weights * resid
        return 0.5 * float(np.sum(wr * resid)), conv.adjoint(wr)

    return cost_grad_part


def deconvolve_object(data, psf, weights, config: DeconvConfig, init=None):
    """Recover the object: min over o >= 0 of WLS(d, h*o) + mu_obj R(o)."""
    d = as_image(data)
    h = as_image(psf, "psf")
    w = as_image(weights, "weights")
    if d.shape != h.shape or d.shape != w.shape:
        raise ValueError("data, psf and weights must share one shape")
    if np.min(w) < 0:
        raise ValueError("weights must be non-negative")
    start = np.maximum(d, 0.0) if init is None else np.maximum(
        as_image(init, "init"), 0.0
    )
    data_part = _data_term(Convolver(h), d, w)

    def cost_grad(o):
        f, g = data_part(o)
        if config.mu_obj > 0:
            fr, gr = reg_obj_cost_grad(o, config.eps_obj)
            f += config.mu_obj * fr
            g = g + config.mu_obj * gr
        return f, g

    return vmlmb_minimize(
        cost_grad, start, lower_bound=0.0, max_iter=config.max_iter
    )


def _deconvolve_psf_raw(data, obj_segmented, weights, config, init=None):
    """PSF update; returns (unit-sum PSF, sum of the raw solution)."""
    d = as_image(data)
    o = as_image(obj_segmented, "object")
    w = as_image(weights, "weights")
    if d.shape != o.shape or d.shape != w.shape:
        raise ValueError("data, object and weights must share one shape")
    if np.min(w) < 0:
        raise ValueError("weights must be non-negative")
    if not np.any(o > 0):
        raise ValueError("empty kernel: segmented object has no support")
    if np.min(o) < 0:
        raise ValueError("segmented object must be non-negative")

    if init is None:
        start = np.full(d.shape, 1.0 / d.size)
    else:
        start = as_image(init, "init")
        if start.shape != d.shape:
            raise ValueError("init shape mismatch")
    h_min = config.h_min_frac * float(start.max())
    if h_min <= 0:
        raise ValueError("initial PSF has non-positive peak")
    start = np.maximum(start, h_min)
    data_part = _data_term(Convolver(o), d, w)

    def cost_grad(h):
        f, g = data_part(h)
        if config.mu_psf > 0:
            fr, gr = reg_psf_cost_grad(h, h_min)
            f += config.mu_psf * fr
            g = g + config.mu_psf * gr
        return f, g

    h = vmlmb_minimize(
        cost_grad, start, lower_bound=h_min, max_iter=config.max_iter
    )
    total = float(h.sum())
    return h / total, total


def deconvolve_psf(data, obj_segmented, weights, config: DeconvConfig, init=None):
    """Recover the PSF: min over h >= h_min of WLS(d, h*o) + mu_psf R(h).

    The result is renormalized to unit sum before return.
    """
    return _deconvolve_psf_raw(data, obj_segmented, weights, config, init)[0]
