"""Reading and writing 12-lead ECG records.

Supported inputs:

* a 16-bit subset of the WFDB format (``<name>.hea`` + ``<name>.dat``),
* CSV files with one column per lead,
* JSON-lines manifests pairing records with report text files.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DuplicateRecordId,
    MalformedHeader,
    MissingFile,
    MissingLeadColumn,
    NonNumericCell,
    NonTwelveLead,
    Overflow16Bit,
    SampleCountMismatch,
    SeriesTooShort,
)

log = logging.getLogger(__name__)

LEAD_NAMES = ("I", "II", "III", "aVR", "aVL", "aVF",
              "V1", "V2", "V3", "V4", "V5", "V6")

DEFAULT_GAIN = 200.0  # ADU/mV, used when a header omits it
DEFAULT_FIXTURE_GAIN = 1000.0   # 16 bit at 1 uV/LSB
SPLITS = ("train", "test")


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LeadSeries:
    lead_name: str
    samples_mv: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "samples_mv", _frozen(self.samples_mv))
        if self.samples_mv.ndim != 1:
            raise ValueError("lead samples must be one-dimensional")

    @property
    def n(self) -> int:
        return int(self.samples_mv.shape[0])

    def __eq__(self, other):
        if not isinstance(other, LeadSeries):
            return NotImplemented
        return (self.lead_name == other.lead_name
                and np.array_equal(self.samples_mv, other.samples_mv))

    __hash__ = None


@dataclass(frozen=True)
class ReportDoc:
    record_id: str
    text: str
    token_ids: Optional[tuple] = None

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError(f"report for {self.record_id!r} is empty")


@dataclass(frozen=True)
class EcgRecord:
    """One 12-lead recording. Immutable once built."""

    record_id: str
    sampling_rate_hz: float
    leads: tuple
    report: Optional[ReportDoc] = None

    def __post_init__(self):
        leads = tuple(self.leads)
        object.__setattr__(self, "leads", leads)
        if not (self.sampling_rate_hz > 0 and math.isfinite(self.sampling_rate_hz)):
            raise ValueError(f"sampling rate must be positive, got {self.sampling_rate_hz}")
        if len(leads) != 12:
            raise NonTwelveLead(f"{self.record_id}: expected 12 leads, got {len(leads)}")
        names = [ld.lead_name for ld in leads]
        if len(set(names)) != 12 or not set(names) <= set(LEAD_NAMES):
            raise ValueError(f"{self.record_id}: lead names must be the 12 standard names, got {names}")
        lengths = {ld.n for ld in leads}
        if len(lengths) != 1:
            raise ValueError(f"{self.record_id}: leads have unequal lengths {sorted(lengths)}")

    @property
    def n_samples(self) -> int:
        return self.leads[0].n

    def lead(self, name: str) -> LeadSeries:
        for ld in self.leads:
            if ld.lead_name == name:
                return ld
        raise KeyError(name)

    def as_array(self, standard_order: bool = True) -> np.ndarray:
        """(12, n) array of samples in mV."""
        order = LEAD_NAMES if standard_order else [ld.lead_name for ld in self.leads]
        return np.stack([self.lead(name).samples_mv for name in order])

    def with_leads(self, leads) -> "EcgRecord":
        return EcgRecord(self.record_id, self.sampling_rate_hz, tuple(leads), self.report)

    def with_report(self, report: Optional[ReportDoc]) -> "EcgRecord":
        return EcgRecord(self.record_id, self.sampling_rate_hz, self.leads, report)


def record_from_array(record_id: str, fs: float, samples, lead_names: Sequence[str] = LEAD_NAMES,
                      report: Optional[ReportDoc] = None) -> EcgRecord:
    """``samples`` is (12, n): one row per lead, in ``lead_names`` order."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] != len(lead_names):
        raise NonTwelveLead(f"{record_id}: expected ({len(lead_names)}, n) samples, got {samples.shape}")
    leads = tuple(LeadSeries(name, samples[i]) for i, name in enumerate(lead_names))
    return EcgRecord(record_id, float(fs), leads, report)


# --- WFDB subset -------------------------------------------------------------

_GAIN_RE = re.compile(r"^([-+0-9.eE]+)(?:\(([-+0-9]+)\))?(?:/\S+)?$")


def _parse_signal_line(line: str, lineno: int):
    """Return (file, gain, baseline, lead_name) from one signal spec line.

    Accepts the short form ``file 16 gain baseline name`` and the usual WFDB
    form ``file 16 gain(baseline)/mV adcres adczero initval checksum bsize name``.
    """
    tok = line.split()
    if len(tok) < 2:
        raise MalformedHeader(f"line {lineno}: too few fields: {line!r}")
    fname, fmt = tok[0], tok[1]
    if fmt != "16":
        raise MalformedHeader(f"line {lineno}: unsupported format code {fmt!r} (only 16)")
    name = tok[-1] if len(tok) >= 3 else None
    gain = baseline = None
    if len(tok) == 5:
        try:
            gain = float(tok[2])
            baseline = int(tok[3])
        except ValueError:
            gain = baseline = None
    if gain is None and len(tok) >= 3:
        m = _GAIN_RE.match(tok[2])
        if m is None:
            raise MalformedHeader(f"line {lineno}: bad gain field {tok[2]!r}")
        gain = float(m.group(1))
        if m.group(2) is not None:
            baseline = int(m.group(2))
        elif len(tok) >= 5 and tok[4].lstrip("-").isdigit():
            baseline = int(tok[4])  # adczero
    if gain is None or gain == 0:
        warnings.warn(f"line {lineno}: no gain given, assuming {DEFAULT_GAIN} ADU/mV", stacklevel=3)
        gain = DEFAULT_GAIN
    if baseline is None:
        baseline = 0
    if not math.isfinite(gain) or gain < 0:
        raise MalformedHeader(f"line {lineno}: invalid gain {gain}")
    return fname, gain, baseline, name


def read_wfdb_header(header_path) -> dict:
    header_path = Path(header_path)
    try:
        text = header_path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise MalformedHeader(f"cannot read {header_path}: {exc}") from exc
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(text.splitlines())]
    lines = [(i, ln) for i, ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise MalformedHeader(f"{header_path}: empty header")
    lineno, first = lines[0]
    tok = first.split()
    if len(tok) < 4:
        raise MalformedHeader(f"{header_path}:{lineno}: record line needs 'name nleads fs nsamples'")
    try:
        name = tok[0]
        nleads = int(tok[1])
        fs = float(tok[2].split("/")[0])
        nsamples = int(tok[3])
    except ValueError as exc:
        raise MalformedHeader(f"{header_path}:{lineno}: {exc}") from exc
    if "/" in name:
        raise MalformedHeader(f"{header_path}: multi-segment records are not supported")
    if nleads != 12:
        raise NonTwelveLead(f"{header_path}: header declares {nleads} leads")
    if fs <= 0 or nsamples < 0:
        raise MalformedHeader(f"{header_path}: invalid fs/nsamples")
    sig_lines = lines[1:1 + nleads]
    if len(sig_lines) != nleads:
        raise MalformedHeader(f"{header_path}: expected {nleads} signal lines, found {len(sig_lines)}")
    signals = [_parse_signal_line(ln, i) for i, ln in sig_lines]
    files = {s[0] for s in signals}
    if len(files) != 1:
        raise MalformedHeader(f"{header_path}: all leads must share one .dat file")
    return {
        "name": name,
        "nleads": nleads,
        "fs": fs,
        "nsamples": nsamples,
        "file": signals[0][0],
        "gain": np.array([s[1] for s in signals]),
        "baseline": np.array([s[2] for s in signals], dtype=np.int64),
        "lead_names": [s[3] for s in signals],
    }


def read_wfdb(header_path, report: Optional[ReportDoc] = None) -> EcgRecord:
    """Read a 12-lead format-16 record; samples come back in mV."""
    header_path = Path(header_path)
    hdr = read_wfdb_header(header_path)
    dat_path = header_path.parent / hdr["file"]
    if not dat_path.exists():
        raise MissingFile(f"sample file {dat_path} not found")
    raw = np.fromfile(dat_path, dtype="<i2")
    expected = hdr["nsamples"] * hdr["nleads"]
    if raw.size < expected:
        raise SampleCountMismatch(
            f"{dat_path}: {raw.size} samples on disk, header declares {expected}")
    raw = raw[:expected].reshape(hdr["nsamples"], hdr["nleads"]).astype(np.int64)
    mv = (raw - hdr["baseline"]) / hdr["gain"]
    leads = []
    for k, name in enumerate(hdr["lead_names"]):
        if name not in LEAD_NAMES:
            raise MalformedHeader(f"{header_path}: unknown lead name {name!r}")
        leads.append(LeadSeries(name, mv[:, k]))
    return EcgRecord(hdr["name"], hdr["fs"], tuple(leads), report)


def _fmt_num(x: float) -> str:
    return repr(float(x)) if not float(x).is_integer() else str(int(x))


def write_wfdb_fixture(record: EcgRecord, directory, gain: float = DEFAULT_FIXTURE_GAIN,
                       baseline: int = 0):
    """Write ``record`` as ``<id>.hea``/``<id>.dat``; returns both paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    data = np.stack([ld.samples_mv for ld in record.leads], axis=1)
    raw = np.rint(data * gain) + baseline
    if raw.size and (raw.min() < -32768 or raw.max() > 32767):
        raise Overflow16Bit(
            f"{record.record_id}: quantized samples span [{raw.min()}, {raw.max()}]")
    name = record.record_id
    hea = directory / f"{name}.hea"
    dat = directory / f"{name}.dat"
    lines = [f"{name} 12 {_fmt_num(record.sampling_rate_hz)} {record.n_samples}"]
    for ld in record.leads:
        lines.append(f"{name}.dat 16 {_fmt_num(gain)} {int(baseline)} {ld.lead_name}")
    _atomic_write_bytes(dat, raw.astype("<i2").tobytes())
    _atomic_write_bytes(hea, ("\n".join(lines) + "\n").encode("utf-8"))
    return hea, dat


def _atomic_write_bytes(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


# --- CSV ---------------------------------------------------------------------

_FS_RE = re.compile(r"^#\s*fs\s*=\s*([-+0-9.eE]+)\s*$")


def read_csv(path, fs: Optional[float] = None, record_id: Optional[str] = None) -> EcgRecord:
    """Read a CSV with a header row of lead names.

    The sampling rate comes from ``fs`` or from a ``# fs=<hz>`` comment line.
    """
    path = Path(path)
    header = None
    rows = []
    meta_fs = None
    with open(path, newline="", encoding="utf-8") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if row[0].lstrip().startswith("#"):
                m = _FS_RE.match(",".join(row).strip())
                if m:
                    meta_fs = float(m.group(1))
                continue
            if header is None:
                header = [c.strip() for c in row]
                continue
            values = []
            for col, cell in enumerate(row, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise NonNumericCell(line_no, col, cell) from None
                if not math.isfinite(v):
                    raise NonNumericCell(line_no, col, cell)
                values.append(v)
            if len(values) != len(header):
                raise NonNumericCell(line_no, len(values) + 1, "<missing>")
            rows.append(values)
    if header is None:
        raise MissingLeadColumn(f"{path}: no header row")
    missing = [name for name in LEAD_NAMES if name not in header]
    if missing or len(header) != 12:
        raise MissingLeadColumn(f"{path}: missing lead columns {missing or header}")
    if len(rows) < 2:
        raise SeriesTooShort(f"{path}: need at least 2 samples per lead, got {len(rows)}")
    rate = fs if fs is not None else meta_fs
    if rate is None:
        raise MalformedHeader(f"{path}: sampling rate not given (use fs= or a '# fs=' line)")
    data = np.array(rows, dtype=np.float64)
    leads = tuple(LeadSeries(name, data[:, k]) for k, name in enumerate(header))
    return EcgRecord(record_id or path.stem, float(rate), leads)


def write_csv(record: EcgRecord, path) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# fs={_fmt_num(record.sampling_rate_hz)}\n")
        w = csv.writer(fh)
        w.writerow([ld.lead_name for ld in record.leads])
        for row in np.stack([ld.samples_mv for ld in record.leads], axis=1):
            w.writerow([repr(float(v)) for v in row])
    os.replace(tmp, path)
    return path


def load_record(path, fs: Optional[float] = None) -> EcgRecord:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_csv(path, fs=fs)
    if path.suffix.lower() != ".hea":
        path = path.with_suffix(".hea")
    return read_wfdb(path)


# --- manifest ----------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    record_id: str
    record_path: Path
    report_path: Optional[Path]
    split: str


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple = field(default_factory=tuple)
    root: Optional[Path] = None

    def split(self, tag: str) -> list:
        return [e for e in self.entries if e.split == tag]

    def __len__(self):
        return len(self.entries)


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    """Parse a JSON-lines manifest; relative paths resolve against its directory."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"manifest {path} not found")
    root = path.parent
    entries = []
    seen = set()
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            rid = str(obj["id"])
            rec = root / obj["record"]
            rep = root / obj["report"] if obj.get("report") else None
            split = obj.get("split", "train")
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise MalformedHeader(f"{path}:{line_no}: bad manifest line ({exc})") from exc
        if split not in SPLITS:
            raise MalformedHeader(f"{path}:{line_no}: split must be one of {SPLITS}, got {split!r}")
        if rid in seen:
            raise DuplicateRecordId(f"{path}:{line_no}: duplicate record id {rid!r}")
        seen.add(rid)
        if check_files:
            rec_file = rec if rec.suffix.lower() in (".hea", ".csv") else rec.with_suffix(".hea")
            for p in (rec_file, rep):
                if p is not None and not p.exists():
                    raise MissingFile(f"{path}:{line_no}: {p} does not exist")
        entries.append(ManifestEntry(rid, rec, rep, split))
    return DatasetManifest(tuple(entries), root)


def write_manifest(entries, path) -> Path:
    """Write manifest lines; ``entries`` are dicts with id/record/report/split."""
    path = Path(path)
    body = "".join(json.dumps(e, sort_keys=False) + "\n" for e in entries)
    _atomic_write_bytes(path, body.encode("utf-8"))
    return path


def read_report(path, record_id: str) -> ReportDoc:
    return ReportDoc(record_id, Path(path).read_text(encoding="utf-8").strip())


def load_entry(entry: ManifestEntry, fs: Optional[float] = None) -> EcgRecord:
    record = load_record(entry.record_path, fs=fs)
    report = read_report(entry.report_path, entry.record_id) if entry.report_path else None
    # manifest id wins over the name stored in the header
    return EcgRecord(entry.record_id, record.sampling_rate_hz, record.leads, report)
