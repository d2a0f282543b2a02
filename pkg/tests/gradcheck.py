"""Central finite-difference oracle for gradient checks."""
from __future__ import annotations

import numpy as np

REL_FLOOR = 1e-5


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    a = np.asarray(analytic, dtype=float).ravel()
    n = np.asarray(numeric, dtype=float).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_gradients(loss_fn, params, rng=None, h: float = 1e-5, max_coords: int | None = 25) -> float:
    """Compare backprop gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must rebuild the graph from the current parameter values on
    each call and return a scalar Tensor. Returns the worst relative error.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng.choice(flat.size, max_coords, replace=False)
        num = np.empty(len(idx))
        for k, j in enumerate(idx):
            orig = flat[j]
            flat[j] = orig + h
            fp = loss_fn().item()
            flat[j] = orig - h
            fm = loss_fn().item()
            flat[j] = orig
            num[k] = (fp - fm) / (2 * h)
        worst = max(worst, rel_error(g.reshape(-1)[idx], num))
    return worst
