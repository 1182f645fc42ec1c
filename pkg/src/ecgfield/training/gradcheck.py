"""Central-difference gradient checking over a sample of coordinates."""
from __future__ import annotations

from typing import Callable

import numpy as np

REL_FLOOR = 1e-6


def finite_diff_check(loss_fn: Callable, params: dict, eps: float = 1e-5,
                      n_coords: int = 200, seed: int = 0, return_details: bool = False):
    """Largest relative error between analytic and numerical gradients.

    ``loss_fn(params) -> (loss, grads)``. Coordinates are drawn uniformly from
    all parameters (without replacement, at least ``n_coords`` of them or all
    if fewer exist). Relative error is ``|a - n| / max(|a|, |n|, 1e-6)``; the
    floor keeps coordinates with a vanishing gradient from dividing by zero.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    _, grads = loss_fn(params)
    names = sorted(params)
    sizes = np.array([np.size(params[k]) for k in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    rng = np.random.default_rng(seed)
    picks = np.sort(rng.choice(total, size=min(n_coords, total), replace=False))
    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    worst = 0.0
    details = []
    for flat in picks:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        name = names[k]
        idx = np.unravel_index(int(flat - offsets[k]), np.shape(params[name]))
        arr = work[name]
        orig = arr[idx]
        arr[idx] = orig + eps
        up = loss_fn(work)[0]
        arr[idx] = orig - eps
        down = loss_fn(work)[0]
        arr[idx] = orig
        numeric = (up - down) / (2 * eps)
        analytic = float(np.asarray(grads[name])[idx])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_FLOOR)
        worst = max(worst, rel)
        details.append((name, idx, analytic, numeric, rel))
    return (worst, details) if return_details else worst
