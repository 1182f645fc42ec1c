"""Lead denoising: spectrum analysis, centered moving average, 50 Hz notch."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import signal as sps

from .errors import EvenWindow, NonFiniteSample, NotchAtOrAboveNyquist, WindowTooLarge
from .signal_io import EcgRecord, LeadSeries


class NotchSkippedWarning(UserWarning):
    """The notch frequency is not below Nyquist, so the notch stage was skipped."""


@dataclass(frozen=True)
class Spectrum:
    bins: np.ndarray
    resolution_hz: float

    def magnitude(self) -> np.ndarray:
        return np.abs(self.bins)


@dataclass(frozen=True)
class NotchConfig:
    fs_hz: float
    f0_hz: float = 50.0
    q: float = 30.0

    def __post_init__(self):
        if self.q <= 0:
            raise ValueError("notch quality factor must be positive")
        if self.fs_hz <= 0 or self.f0_hz <= 0:
            raise ValueError("notch frequencies must be positive")

    @property
    def applicable(self) -> bool:
        return self.f0_hz < self.fs_hz / 2


def _finite(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteSample("series contains NaN or infinite values")
    return x


def fft(samples, fs_hz: float = 1.0) -> Spectrum:
    """Full complex DFT, X_k = sum_t x_t exp(-2 pi i k t / n)."""
    x = _finite(samples)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("fft needs a non-empty 1-D series")
    return Spectrum(np.fft.fft(x), fs_hz / x.size)


def ifft(spectrum: Spectrum) -> np.ndarray:
    return np.fft.ifft(spectrum.bins).real


def moving_window_filter(samples, n_points: int) -> np.ndarray:
    """Centered moving average over ``n_points`` samples.

    Near the ends the window shrinks symmetrically, so sample ``i`` averages
    ``x[i-h : i+h+1]`` with ``h = min(n_points // 2, i, n - 1 - i)``.
    """
    x = _finite(samples)
    n = x.size
    if n_points < 1 or n_points % 2 == 0:
        raise EvenWindow(f"window must be a positive odd integer, got {n_points}")
    if n_points > n:
        raise WindowTooLarge(f"window of {n_points} points exceeds series length {n}")
    if n_points == 1:
        return x.copy()
    half = n_points // 2
    out = np.empty_like(x)
    out[half:n - half] = np.lib.stride_tricks.sliding_window_view(x, n_points).mean(axis=1)
    for i in list(range(half)) + list(range(n - half, n)):
        h = min(half, i, n - 1 - i)
        out[i] = x[i - h:i + h + 1].mean()
    return out


def notch_coefficients(cfg: NotchConfig):
    """Second-order notch (audio-EQ cookbook form), bandwidth f0/Q.

    Returns ``(b, a)`` normalised so that ``a[0] == 1``. Gain is exactly 1 at DC
    and Nyquist and 0 at ``f0``.
    """
    if not cfg.applicable:
        raise NotchAtOrAboveNyquist(
            f"notch at {cfg.f0_hz} Hz needs fs > {2 * cfg.f0_hz} Hz, got {cfg.fs_hz}")
    w0 = 2 * math.pi * cfg.f0_hz / cfg.fs_hz
    alpha = math.sin(w0) / (2 * cfg.q)
    cw = math.cos(w0)
    a0 = 1 + alpha
    b = np.array([1.0, -2 * cw, 1.0]) / a0
    a = np.array([1.0, -2 * cw / a0, (1 - alpha) / a0])
    return b, a


def notch_filter(samples, cfg: NotchConfig) -> np.ndarray:
    """Apply the notch causally (single forward pass, zero initial state)."""
    x = _finite(samples)
    b, a = notch_coefficients(cfg)
    return sps.lfilter(b, a, x)


def notch_response_db(cfg: NotchConfig, freqs_hz) -> np.ndarray:
    b, a = notch_coefficients(cfg)
    _, h = sps.freqz(b, a, worN=np.asarray(freqs_hz, dtype=float), fs=cfg.fs_hz)
    return 20 * np.log10(np.maximum(np.abs(h), 1e-300))


def preprocess_pipeline(record: EcgRecord, n_points: int = 1,
                        notch: Optional[NotchConfig] = None) -> EcgRecord:
    """Window filter then notch on every lead; metadata is carried over.

    When the notch sits at or above Nyquist it is skipped with a
    ``NotchSkippedWarning`` and the window filter still runs.
    """
    apply_notch = notch is not None
    if notch is not None and notch.fs_hz != record.sampling_rate_hz:
        notch = NotchConfig(record.sampling_rate_hz, notch.f0_hz, notch.q)
    if notch is not None and not notch.applicable:
        warnings.warn(
            f"{record.record_id}: notch at {notch.f0_hz} Hz skipped, fs={record.sampling_rate_hz} Hz "
            f"puts it at or above Nyquist", NotchSkippedWarning, stacklevel=2)
        apply_notch = False
    leads = []
    for ld in record.leads:
        try:
            y = moving_window_filter(ld.samples_mv, n_points)
            if apply_notch:
                y = notch_filter(y, notch)
        except Exception as exc:
            raise type(exc)(f"lead {ld.lead_name}: {exc}") from exc
        leads.append(LeadSeries(ld.lead_name, y))
    return record.with_leads(leads)
