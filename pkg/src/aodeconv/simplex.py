"""Derivative-free simplex minimization."""

from __future__ import annotations

import numpy as np
from scipy import optimize


def simplex_search(objective, x0, max_iter: int, initial_step=None):
    """Nelder-Mead search from x0, budgeted by iteration count.

    Deterministic given x0.  Returns the best point found, which is
    never worse than the starting point.  Raises ValueError when the
    objective is non-finite at x0.

    `initial_step` sets the size of the starting simplex, one entry per
    coordinate (or a scalar for all).  Without it the solver perturbs
    each coordinate by 5%, which pins any coordinate that starts at
    exactly zero.
    """
    start = np.atleast_1d(np.asarray(x0, dtype=np.float64)).ravel()
    f0 = float(objective(start))
    if not np.isfinite(f0):
        raise ValueError("objective is non-finite at the starting point")
    options = {"maxiter": int(max_iter), "xatol": 1e-9, "fatol": 1e-12}
    if initial_step is not None:
        step = np.broadcast_to(
            np.asarray(initial_step, dtype=np.float64), start.shape
        )
        simplex = np.vstack([start, start + np.diag(step)])
        options["initial_simplex"] = simplex
    res = optimize.minimize(
        objective,
        start,
        method="Nelder-Mead",
        options=options,
    )
    if np.isfinite(res.fun) and res.fun <= f0:
        return np.asarray(res.x, dtype=np.float64)
    return start
