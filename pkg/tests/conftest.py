from pathlib import Path

import numpy as np
import pytest

from ecgfield.signal_io import LEAD_NAMES, ReportDoc, record_from_array

FIXTURES = Path(__file__).parent / "fixtures"
SYNTH4 = FIXTURES / "synthetic4" / "manifest.jsonl"


@pytest.fixture
def synth4():
    return SYNTH4


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_record(record_id="r0", n=200, fs=100.0, seed=0, report=None, scale=1.0):
    rng = np.random.default_rng(seed)
    x = np.round(rng.normal(size=(12, n)) * scale * 1000) / 1000
    rep = ReportDoc(record_id, report) if report else None
    return record_from_array(record_id, fs, x, LEAD_NAMES, rep)


@pytest.fixture
def record():
    return make_record()
