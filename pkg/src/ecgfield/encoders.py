"""Series-to-image encoders: Markov transition field, Gramian angular fields,
recurrence plot.

All encoders take a 1-D real series and return an :class:`EncodedField`, a
square matrix tagged with its method and the range its values live in.
When ``out_size`` is given the ``n x n`` field is reduced to
``out_size x out_size`` by averaging rectangular blocks of rows/columns
(see :func:`block_bounds`). The reduction is computed without forming the
full matrix where the field factorises (MTF, GASF, GADF); RP is reduced
block-row by block-row.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    NonFiniteSample,
    OutOfDomain,
    OutSizeTooLarge,
    QTooSmall,
    RpSeriesTooShort,
    SeriesTooShort,
)

METHODS = ("MTF", "GASF", "GADF", "RP")
RESCALE_MODES = ("neg1to1", "zeroTo1")
DOMAIN_TOL = 1e-12


@dataclass(frozen=True)
class RescaledSeries:
    values: np.ndarray
    mode: str = "neg1to1"


@dataclass(frozen=True)
class PolarSeries:
    phi: np.ndarray
    r: np.ndarray


@dataclass(frozen=True)
class QuantileBinning:
    q_count: int
    assignment: np.ndarray
    bin_edges: np.ndarray


@dataclass(frozen=True)
class TransitionMatrix:
    w: np.ndarray

    @property
    def observed_rows(self) -> np.ndarray:
        return self.w.sum(axis=1) > 0


@dataclass(frozen=True)
class EncodedField:
    method: str
    grid: np.ndarray
    value_range: tuple

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        g = self.grid
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError(f"field must be square, got shape {g.shape}")

    @property
    def size(self) -> int:
        return int(self.grid.shape[0])


@dataclass(frozen=True)
class RpConfig:
    """Recurrence plot settings.

    ``epsilon=None`` means ``eps_fraction`` times the largest pairwise
    trajectory distance of the series being encoded.
    """
    dim: int = 1
    delay: int = 1
    epsilon: Optional[float] = None
    mode: str = "binary"
    eps_fraction: float = 0.1

    def __post_init__(self):
        if self.dim < 1 or self.delay < 1:
            raise ValueError("RP dimension and delay must be positive integers")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("RP threshold must be positive")
        if self.mode not in ("binary", "distance"):
            raise ValueError(f"RP mode must be 'binary' or 'distance', got {self.mode!r}")
        if not 0 < self.eps_fraction <= 1:
            raise ValueError("eps_fraction must lie in (0, 1]")

    def n_trajectories(self, n: int) -> int:
        return n - (self.dim - 1) * self.delay


@dataclass(frozen=True)
class EncoderConfig:
    """Per-method settings shared by the composer and the CLI."""
    q_bins: int = 8
    rp: RpConfig = field(default_factory=RpConfig)
    rescale_mode: str = "neg1to1"
    gaf_variant: str = "GASF"


def _series(samples, min_len: int = 1) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("expected a 1-D series")
    if x.size < min_len:
        raise SeriesTooShort(f"series of length {x.size}, need at least {min_len}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteSample("series contains NaN or infinite values")
    return x


# --- block reduction -----------------------------------------------------------

def block_bounds(n: int, s: int):
    """Row ranges ``[start_k, end_k)`` for reducing ``n`` points to ``s`` blocks.

    Blocks tile ``0..n`` exactly when ``s`` divides ``n``; otherwise neighbouring
    blocks share at most one index.
    """
    if s < 1:
        raise ValueError("out_size must be positive")
    if s > n:
        raise OutSizeTooLarge(f"out_size {s} exceeds series length {n}")
    k = np.arange(s)
    starts = (k * n) // s
    ends = -((-(k + 1) * n) // s)
    return starts, ends


def block_average(full: np.ndarray, s: int) -> np.ndarray:
    """Reference reduction of an explicit ``n x n`` matrix."""
    n = full.shape[0]
    starts, ends = block_bounds(n, s)
    out = np.empty((s, s))
    for a in range(s):
        for b in range(s):
            out[a, b] = full[starts[a]:ends[a], starts[b]:ends[b]].mean()
    return out


def _block_membership(n: int, s: int) -> np.ndarray:
    """(s, n) matrix whose row k averages the indices of block k."""
    starts, ends = block_bounds(n, s)
    h = np.zeros((s, n))
    for k in range(s):
        h[k, starts[k]:ends[k]] = 1.0 / (ends[k] - starts[k])
    return h


# --- rescaling and polar coordinates -------------------------------------------

def rescale(samples, mode: str = "neg1to1") -> RescaledSeries:
    x = _series(samples)
    if mode not in RESCALE_MODES:
        raise ValueError(f"rescale mode must be one of {RESCALE_MODES}")
    lo, hi = x.min(), x.max()
    span = hi - lo
    if span == 0:
        v = np.zeros_like(x) if mode == "neg1to1" else np.full_like(x, 0.5)
        return RescaledSeries(v, mode)
    if mode == "neg1to1":
        v = ((x - hi) + (x - lo)) / span
        v = np.clip(v, -1.0, 1.0)
    else:
        v = np.clip((x - lo) / span, 0.0, 1.0)
    return RescaledSeries(v, mode)


def _checked_unit(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if np.any(np.abs(v) > 1 + DOMAIN_TOL) or not np.all(np.isfinite(v)):
        raise OutOfDomain("rescaled values must lie in [-1, 1]")
    return np.clip(v, -1.0, 1.0)


def to_polar(rescaled: RescaledSeries, span: float = 1.0) -> PolarSeries:
    """Angle ``arccos(value)``, radius ``index / span`` (0-based index)."""
    if not span > 0:
        raise ValueError("polar span must be positive")
    v = _checked_unit(rescaled.values)
    return PolarSeries(np.arccos(v), np.arange(v.size) / span)


# --- Markov transition field ---------------------------------------------------

def quantile_bins(samples, q: int) -> QuantileBinning:
    """Assign each point to one of ``q`` equal-probability bins.

    Edges are the empirical k/q quantiles (linear interpolation). A point lying
    exactly on an interior edge goes to the lower bin.
    """
    x = _series(samples)
    if q < 2:
        raise QTooSmall(f"need at least 2 quantile bins, got {q}")
    if x.size < q:
        warnings.warn(f"{x.size} points spread over {q} bins; some bins will be empty",
                      stacklevel=2)
    edges = np.quantile(x, np.arange(q + 1) / q)
    assignment = np.searchsorted(edges[1:-1], x, side="left")
    return QuantileBinning(q, assignment.astype(np.int64), edges)


def markov_transition_matrix(binning: QuantileBinning) -> TransitionMatrix:
    """Row-normalised first-order transition counts.

    ``w[i, j]`` counts steps where a point in bin ``j`` is followed by a point in
    bin ``i``; each row with at least one count is scaled to sum to one and
    unobserved rows stay zero.
    """
    a = np.asarray(binning.assignment)
    if a.size < 2:
        raise SeriesTooShort("need at least two points to count transitions")
    q = binning.q_count
    counts = np.zeros((q, q))
    np.add.at(counts, (a[1:], a[:-1]), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    w = np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)
    return TransitionMatrix(w)


def mtf(samples, q: int = 8, out_size: Optional[int] = None) -> EncodedField:
    """Markov transition field, ``M[i, j] = w[bin(x_i), bin(x_j)]``."""
    x = _series(samples, min_len=2)
    binning = quantile_bins(x, q)
    w = markov_transition_matrix(binning).w
    a = binning.assignment
    if out_size is None or out_size == x.size:
        grid = w[a][:, a]
    else:
        # block mean of w[a_i, a_j] = (H W H^T) with H the per-block bin histogram
        onehot = np.zeros((x.size, q))
        onehot[np.arange(x.size), a] = 1.0
        hist = _block_membership(x.size, out_size) @ onehot
        grid = np.clip(hist @ w @ hist.T, 0.0, 1.0)
    return EncodedField("MTF", grid, (0.0, 1.0))


# --- Gramian angular fields ----------------------------------------------------

def _gaf_parts(rescaled: RescaledSeries, out_size: Optional[int]):
    v = _checked_unit(rescaled.values)
    s = np.sqrt(np.clip(1.0 - v * v, 0.0, None))
    if out_size is None or out_size == v.size:
        return v, s
    h = _block_membership(v.size, out_size)
    return h @ v, h @ s


def gasf(rescaled: RescaledSeries, out_size: Optional[int] = None) -> EncodedField:
    """``cos(phi_i + phi_j)`` evaluated as ``x_i x_j - sqrt(1-x_i^2) sqrt(1-x_j^2)``."""
    v, s = _gaf_parts(rescaled, out_size)
    grid = np.clip(np.outer(v, v) - np.outer(s, s), -1.0, 1.0)
    return EncodedField("GASF", grid, (-1.0, 1.0))


def gadf(rescaled: RescaledSeries, out_size: Optional[int] = None) -> EncodedField:
    """``sin(phi_i - phi_j)`` evaluated as ``sqrt(1-x_i^2) x_j - x_i sqrt(1-x_j^2)``."""
    v, s = _gaf_parts(rescaled, out_size)
    grid = np.clip(np.outer(s, v) - np.outer(v, s), -1.0, 1.0)
    return EncodedField("GADF", grid, (-1.0, 1.0))


def gasf_trig(rescaled: RescaledSeries) -> np.ndarray:
    phi = to_polar(rescaled).phi
    return np.cos(phi[:, None] + phi[None, :])


def gadf_trig(rescaled: RescaledSeries) -> np.ndarray:
    phi = to_polar(rescaled).phi
    return np.sin(phi[:, None] - phi[None, :])


# --- recurrence plot -------------------------------------------------------------

def trajectories(samples, dim: int, delay: int) -> np.ndarray:
    """Delay embedding: row i is ``(x_i, x_{i+delay}, ..., x_{i+(dim-1)delay})``."""
    x = _series(samples)
    count = x.size - (dim - 1) * delay
    if count < 1:
        raise RpSeriesTooShort(
            f"series of length {x.size} too short for dim={dim}, delay={delay}")
    return np.stack([x[k * delay:k * delay + count] for k in range(dim)], axis=1)


def _pair_distances(rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    # squares accumulated coordinate by coordinate, left to right
    acc = np.subtract.outer(rows[:, 0], cols[:, 0])
    np.multiply(acc, acc, out=acc)
    for k in range(1, rows.shape[1]):
        d = np.subtract.outer(rows[:, k], cols[:, k])
        np.multiply(d, d, out=d)
        acc += d
    return np.sqrt(acc, out=acc)


ROW_BUDGET = 4_000_000  # distance entries held at once


def _row_chunks(count: int, budget: int = ROW_BUDGET):
    step = max(1, budget // max(count, 1))
    for start in range(0, count, step):
        yield start, min(count, start + step)


def max_pair_distance(traj: np.ndarray) -> float:
    if traj.shape[1] == 1:
        col = traj[:, 0]
        return float(col.max() - col.min())
    best = 0.0
    for a, b in _row_chunks(traj.shape[0]):
        best = max(best, float(_pair_distances(traj[a:b], traj).max()))
    return best


def recurrence_plot(samples, cfg: Optional[RpConfig] = None,
                    out_size: Optional[int] = None) -> EncodedField:
    """Recurrence plot over delay-embedded trajectories.

    Binary mode: ``R[i, j] = 1`` when ``||x_i - x_j|| <= epsilon`` (so the
    Heaviside step is 1 at 0), else 0. Distance mode returns the raw Euclidean
    distances.
    """
    cfg = cfg or RpConfig()
    traj = trajectories(samples, cfg.dim, cfg.delay)
    count = traj.shape[0]
    dmax = max_pair_distance(traj)
    if cfg.mode == "binary":
        eps = cfg.epsilon if cfg.epsilon is not None else cfg.eps_fraction * dmax
        value_range = (0.0, 1.0)
    else:
        eps = None
        value_range = (0.0, dmax if dmax > 0 else 1.0)

    def transform(d):
        return (d <= eps).astype(np.float64) if eps is not None else d

    if out_size is None or out_size == count:
        return EncodedField("RP", transform(_pair_distances(traj, traj)), value_range)

    starts, ends = block_bounds(count, out_size)
    widths = ends - starts
    grid = np.empty((out_size, out_size))
    k = 0
    while k < out_size:
        # a group of consecutive block-rows whose distance slab fits the budget
        k1 = k + 1
        while k1 < out_size and (ends[k1] - starts[k]) * count <= ROW_BUDGET:
            k1 += 1
        r0, r1 = starts[k], ends[k1 - 1]
        slab = transform(_pair_distances(traj[r0:r1], traj))
        cs = np.zeros((slab.shape[0], count + 1))
        np.cumsum(slab, axis=1, out=cs[:, 1:])
        cols = cs[:, ends] - cs[:, starts]
        rs = np.zeros((cols.shape[0] + 1, out_size))
        np.cumsum(cols, axis=0, out=rs[1:])
        block = rs[ends[k:k1] - r0] - rs[starts[k:k1] - r0]
        grid[k:k1] = block / (widths[k:k1, None] * widths[None, :])
        k = k1
    grid = np.clip(grid, value_range[0], value_range[1])
    return EncodedField("RP", grid, value_range)


# --- dispatch --------------------------------------------------------------------

def encode(samples, method: str, cfg: Optional[EncoderConfig] = None,
           out_size: Optional[int] = None) -> EncodedField:
    """Encode one series with ``method`` ('MTF', 'GASF', 'GADF', 'GAF' or 'RP')."""
    cfg = cfg or EncoderConfig()
    m = method.upper()
    if m == "GAF":
        m = cfg.gaf_variant.upper()
    if m == "MTF":
        return mtf(samples, cfg.q_bins, out_size)
    if m in ("GASF", "GADF"):
        scaled = rescale(samples, cfg.rescale_mode)
        return (gasf if m == "GASF" else gadf)(scaled, out_size)
    if m == "RP":
        return recurrence_plot(samples, cfg.rp, out_size)
    raise ValueError(f"unknown encoding method {method!r}")


def effective_epsilon(samples, cfg: RpConfig) -> float:
    if cfg.epsilon is not None:
        return cfg.epsilon
    return cfg.eps_fraction * max_pair_distance(trajectories(samples, cfg.dim, cfg.delay))

