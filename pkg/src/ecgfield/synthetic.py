"""Seeded 12-lead corpus: class-dependent harmonic mixtures plus templated reports.

Each record is a sum of harmonics of its beat frequency. The harmonic
amplitudes and phases depend on the class, every lead applies its own gain
(some leads are inverted), and a little baseline wander and white noise are
added. Reports name the class findings and the heart rate, so both towers see
the same two attributes.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .signal_io import LEAD_NAMES, EcgRecord, ReportDoc, record_from_array, write_manifest, write_wfdb_fixture

CLASSES = ("NORM", "MI", "STTC", "CD", "HYP")
RATES_BPM = tuple(range(40, 161, 10))  # 13 levels

# harmonic amplitudes (mV) and phases (rad) of the beat frequency
_HARMONICS = {
    "NORM": ([0.30, 0.45, 0.35, 0.20, 0.12, 0.06], [0.0, 0.4, 0.9, 1.3, 1.8, 2.2]),
    "MI":   ([0.45, 0.10, 0.40, 0.05, 0.25, 0.02], [2.6, 0.1, -1.2, 0.5, 2.9, 0.0]),
    "STTC": ([0.55, 0.30, 0.05, 0.05, 0.02, 0.01], [-1.4, 1.9, 0.3, 0.0, 0.0, 0.0]),
    "CD":   ([0.10, 0.15, 0.20, 0.35, 0.40, 0.30], [0.7, -0.9, 2.2, -2.0, 1.1, -0.4]),
    "HYP":  ([0.20, 0.60, 0.15, 0.45, 0.05, 0.25], [1.2, 2.8, -0.6, 1.7, 0.2, 3.0]),
}
_LEAD_GAIN = np.array([1.0, 1.3, 0.6, -1.1, 0.5, 0.9, -0.7, -0.4, 0.5, 1.2, 1.4, 1.1])

_FINDINGS = {
    "NORM": "sinus rhythm normal ecg",
    "MI": "pathological q waves consistent with myocardial infarction",
    "STTC": "st segment depression with t wave changes",
    "CD": "conduction disturbance with bundle branch block",
    "HYP": "left ventricular hypertrophy with high voltage",
}


@dataclass(frozen=True)
class SyntheticConfig:
    n_train: int = 256
    n_test: int = 64
    fs_hz: float = 100.0
    duration_s: float = 10.0
    noise_mv: float = 0.02
    wander_mv: float = 0.05
    seed: int = 0


def rate_word(bpm: int) -> str:
    if bpm < 60:
        return "bradycardia"
    if bpm > 100:
        return "tachycardia"
    return "normal rate"


def report_text(label: str, bpm: int) -> str:
    return f"{_FINDINGS[label]} . {rate_word(bpm)} . heart rate {bpm} bpm ."


def synth_samples(label: str, bpm: float, rng, fs_hz: float = 100.0, duration_s: float = 10.0,
                  noise_mv: float = 0.02, wander_mv: float = 0.05) -> np.ndarray:
    """(n, 12) array in mV."""
    amps, phases = (np.asarray(a, dtype=np.float64) for a in _HARMONICS[label])
    n = int(round(fs_hz * duration_s))
    t = np.arange(n) / fs_hz
    f0 = bpm / 60.0
    k = np.arange(1, amps.size + 1)
    shift = rng.uniform(0, 2 * np.pi)
    beat = (amps[:, None] * np.cos(2 * np.pi * f0 * k[:, None] * t + phases[:, None] + k[:, None] * shift)).sum(0)
    gains = _LEAD_GAIN * rng.uniform(0.85, 1.15, size=12)
    wander = wander_mv * np.sin(2 * np.pi * rng.uniform(0.1, 0.4) * t + rng.uniform(0, 2 * np.pi))
    noise = rng.normal(0.0, noise_mv, size=(n, 12))
    return beat[:, None] * gains[None, :] + wander[:, None] + noise


def make_record(record_id: str, label: str, bpm: int, rng, cfg: SyntheticConfig = SyntheticConfig()) -> EcgRecord:
    x = synth_samples(label, bpm, rng, cfg.fs_hz, cfg.duration_s, cfg.noise_mv, cfg.wander_mv)
    return record_from_array(record_id, cfg.fs_hz, x.T, LEAD_NAMES, ReportDoc(record_id, report_text(label, bpm)))


def _combos(n: int, rng) -> list:
    """``n`` (label, rate) pairs cycling through shuffled full passes of the grid."""
    grid = [(c, r) for c in CLASSES for r in RATES_BPM]
    out = []
    while len(out) < n:
        out.extend(grid[i] for i in rng.permutation(len(grid)))
    return out[:n]


def generate(cfg: SyntheticConfig = SyntheticConfig()) -> list:
    """``[(record, label, bpm, split), ...]``; train first, then test."""
    rng = np.random.default_rng(cfg.seed)
    out = []
    for split, n in (("train", cfg.n_train), ("test", cfg.n_test)):
        for i, (label, bpm) in enumerate(_combos(n, rng)):
            rid = f"{split}{i:04d}"
            out.append((make_record(rid, label, bpm, rng, cfg), label, bpm, split))
    return out


def write_corpus(out_dir, cfg: SyntheticConfig = SyntheticConfig()) -> Path:
    """Write WFDB records, report texts and ``manifest.jsonl``; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "records").mkdir(parents=True, exist_ok=True)
    (out_dir / "reports").mkdir(parents=True, exist_ok=True)
    lines = []
    for record, label, bpm, split in generate(cfg):
        write_wfdb_fixture(record, out_dir / "records")
        rep = out_dir / "reports" / f"{record.record_id}.txt"
        rep.write_text(record.report.text + "\n", encoding="utf-8")
        lines.append({"id": record.record_id, "record": f"records/{record.record_id}.hea",
                      "report": f"reports/{record.record_id}.txt", "split": split,
                      "label": label, "rate_bpm": bpm})
    return write_manifest(lines, out_dir / "manifest.jsonl")
