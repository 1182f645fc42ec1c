"""Momentum (slow) copy of the encoder and the two feature queues."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import NormViolation, ShapeMismatch
from .model import copy_params

NORM_TOL = 1e-6
DEFAULT_MU = 0.95
DEFAULT_CAPACITY = 256


@dataclass(frozen=True)
class MomentumState:
    params: dict
    image_queue: np.ndarray
    text_queue: np.ndarray
    capacity: int = DEFAULT_CAPACITY
    mu: float = DEFAULT_MU

    def __post_init__(self):
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError("momentum coefficient must lie in [0, 1]")
        if self.capacity < 0:
            raise ValueError("queue capacity must be non-negative")

    @classmethod
    def start(cls, params: dict, embed_dim: int, capacity: int = DEFAULT_CAPACITY, mu: float = DEFAULT_MU,
              fill_rng=None):
        """Momentum copy of ``params``; queues empty, or full of random unit
        vectors when ``fill_rng`` is given (so the candidate count never changes)."""
        if fill_rng is None:
            iq = np.zeros((0, embed_dim))
            tq = iq.copy()
        else:
            rng = np.random.default_rng(fill_rng)
            iq, tq = (random_unit(rng, capacity, embed_dim) for _ in range(2))
        return cls(copy_params(params), iq, tq, capacity, mu)

    def __len__(self):
        return int(self.image_queue.shape[0])


def random_unit(rng, n: int, dim: int) -> np.ndarray:
    v = rng.normal(size=(n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def momentum_update(params: dict, momentum_params: dict, mu: float) -> dict:
    """Elementwise ``mu * slow + (1 - mu) * live``; returns new arrays."""
    if params.keys() != momentum_params.keys():
        raise ShapeMismatch("parameter sets differ")
    out = {}
    for k, live in params.items():
        slow = momentum_params[k]
        if np.shape(live) != np.shape(slow):
            raise ShapeMismatch(f"{k}: {np.shape(live)} vs {np.shape(slow)}")
        if mu == 1.0:
            out[k] = np.array(slow, copy=True)
        elif mu == 0.0:
            out[k] = np.array(live, copy=True)
        else:
            out[k] = mu * slow + (1.0 - mu) * live
    return out


def _check_unit(vecs: np.ndarray, what: str) -> np.ndarray:
    vecs = np.atleast_2d(np.asarray(vecs, dtype=np.float64))
    if vecs.size and np.max(np.abs(np.linalg.norm(vecs, axis=1) - 1.0)) > NORM_TOL:
        raise NormViolation(f"{what} queue only accepts unit vectors")
    return vecs


def queue_push(state: MomentumState, image_vecs, text_vecs) -> MomentumState:
    """FIFO append; the oldest rows fall off beyond ``capacity``."""
    iv = _check_unit(image_vecs, "image")
    tv = _check_unit(text_vecs, "text")
    m = state.capacity
    iq = np.concatenate([state.image_queue, iv])[-m:] if m else state.image_queue[:0]
    tq = np.concatenate([state.text_queue, tv])[-m:] if m else state.text_queue[:0]
    return replace(state, image_queue=iq, text_queue=tq)


def step_momentum(state: MomentumState, params: dict) -> MomentumState:
    return replace(state, params=momentum_update(params, state.params, state.mu))
