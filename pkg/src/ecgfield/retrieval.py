"""Cross-modal ranking, recall@K / RSUM and the on-disk embedding index.

Index file layout (little-endian)::

    b"ECGIDX1\\0"  u16 version  u32 dim  u64 count
    count x ( u32 id_len, id utf-8, u8 modality (0 image, 1 text), dim x f32 )
    u32 CRC32 of every preceding byte

Pairs are matched by id: an image and a text with the same id belong together.
"""
from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import BadMagic, ChecksumMismatch, DimMismatch, MissingTruth, VersionMismatch

MODALITIES = ("image", "text")
MAGIC = b"ECGIDX1\x00"
VERSION = 1
DEFAULT_KS = (1, 5, 10)
DEFAULT_K_TEST = 128
NORM_TOL = 1e-6


@dataclass(frozen=True)
class Embedding:
    id: str
    modality: str
    vector: np.ndarray

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}")
        v = np.asarray(self.vector, dtype=np.float32).ravel()
        if abs(float(np.linalg.norm(v.astype(np.float64))) - 1.0) > NORM_TOL:
            raise ValueError(f"embedding {self.id!r} is not unit-norm")
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)

    @property
    def dim(self) -> int:
        return int(self.vector.size)

    def __eq__(self, other):
        if not isinstance(other, Embedding):
            return NotImplemented
        return (self.id == other.id and self.modality == other.modality
                and self.vector.tobytes() == other.vector.tobytes())

    __hash__ = None


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class EmbeddingIndex:
    dim: int
    entries: tuple = field(default_factory=tuple)

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        seen = set()
        for e in entries:
            if e.dim != self.dim:
                raise DimMismatch(f"{e.id}: dim {e.dim} != index dim {self.dim}")
            key = (e.modality, e.id)
            if key in seen:
                raise ValueError(f"duplicate {e.modality} id {e.id!r}")
            seen.add(key)

    @classmethod
    def from_arrays(cls, ids: Sequence[str], image_vecs, text_vecs) -> "EmbeddingIndex":
        image_vecs = np.atleast_2d(np.asarray(image_vecs))
        text_vecs = np.atleast_2d(np.asarray(text_vecs))
        dim = image_vecs.shape[1] if len(ids) else max(image_vecs.shape[-1], 0)
        entries = [Embedding(i, "image", v) for i, v in zip(ids, image_vecs)]
        entries += [Embedding(i, "text", v) for i, v in zip(ids, text_vecs)]
        return cls(int(dim), tuple(entries))

    def of(self, modality: str) -> list:
        return [e for e in self.entries if e.modality == modality]

    @property
    def pairing(self) -> dict:
        """image id -> text id, for ids present in both modalities."""
        texts = {e.id for e in self.of("text")}
        return {e.id: e.id for e in self.of("image") if e.id in texts}

    def __len__(self):
        return len(self.entries)


# --- scoring ---------------------------------------------------------------------------

def similarity(a: Embedding, b: Embedding) -> float:
    if a.dim != b.dim:
        raise DimMismatch(f"dims differ: {a.dim} vs {b.dim}")
    return float(np.dot(a.vector.astype(np.float64), b.vector.astype(np.float64)))


def rank(query: Embedding, candidates: Sequence[Embedding], k_test: int = DEFAULT_K_TEST) -> list:
    """Ids of the top ``min(k_test, len(candidates))`` candidates.

    Order is by descending similarity, ties by ascending id.
    """
    if k_test < 1:
        raise ValueError("k_test must be positive")
    if not candidates:
        return []
    if any(c.modality == query.modality for c in candidates):
        raise ValueError("candidates must come from the other modality")
    dims = {c.dim for c in candidates}
    if dims != {query.dim}:
        raise DimMismatch(f"query dim {query.dim}, candidate dims {sorted(dims)}")
    mat = np.stack([c.vector for c in candidates]).astype(np.float64)
    scores = mat @ query.vector.astype(np.float64)
    ids = np.array([c.id for c in candidates])
    order = np.lexsort((ids, -scores))
    return [str(ids[i]) for i in order[:k_test]]


def recall_at_k(rankings: Mapping[str, Sequence[str]], truth: Mapping[str, str], k: int) -> float:
    """Fraction of queries whose true partner appears among their first ``k`` results."""
    if k < 1:
        raise ValueError("K must be positive")
    if not rankings:
        return 0.0
    hits = 0
    for qid, ranked in rankings.items():
        if qid not in truth:
            raise MissingTruth(f"query {qid!r} has no ground-truth partner")
        hits += truth[qid] in list(ranked)[:k]
    return hits / len(rankings)


def rsum(percentages: Iterable[float]) -> float:
    """Sum of R@{1,5,10} percentages over both directions."""
    vals = [float(v) for v in percentages]
    if len(vals) != 6:
        raise ValueError(f"RSUM takes six recall values, got {len(vals)}")
    return float(sum(vals))


@dataclass(frozen=True)
class RetrievalReport:
    direction: str
    r_at: dict
    rsum: float

    def percentages(self) -> list:
        return [100.0 * self.r_at[k] for k in sorted(self.r_at)]

    def to_dict(self) -> dict:
        return {"direction": self.direction,
                "r_at": {str(k): v for k, v in sorted(self.r_at.items())},
                "rsum": self.rsum}

    @classmethod
    def from_dict(cls, d: dict) -> "RetrievalReport":
        return cls(d["direction"], {int(k): float(v) for k, v in d["r_at"].items()}, float(d["rsum"]))


def _direction_rankings(queries, candidates, k_test):
    return {q.id: rank(q, candidates, k_test) for q in queries}


def evaluate(index: EmbeddingIndex, ks: Sequence[int] = DEFAULT_KS,
             k_test: int = DEFAULT_K_TEST) -> list:
    """Image->text and text->image reports; both carry the shared RSUM."""
    pairing = index.pairing
    images = [e for e in index.of("image") if e.id in pairing]
    texts = [e for e in index.of("text") if e.id in set(pairing.values())]
    inverse = {t: i for i, t in pairing.items()}
    ks = sorted(set(int(k) for k in ks))
    i2t = _direction_rankings(images, texts, k_test)
    t2i = _direction_rankings(texts, images, k_test)
    r_i2t = {k: recall_at_k(i2t, pairing, k) for k in ks}
    r_t2i = {k: recall_at_k(t2i, inverse, k) for k in ks}
    total = float(sum(100.0 * v for v in r_i2t.values()) + sum(100.0 * v for v in r_t2i.values()))
    return [RetrievalReport("image_to_text", r_i2t, total),
            RetrievalReport("text_to_image", r_t2i, total)]


def report_json(reports: Sequence[RetrievalReport], k_test: int = DEFAULT_K_TEST, **extra) -> dict:
    out = {"k_test": k_test, "reports": [r.to_dict() for r in reports],
           "rsum": reports[0].rsum if reports else 0.0}
    out.update(extra)
    return out


def write_report(reports: Sequence[RetrievalReport], path, k_test: int = DEFAULT_K_TEST, **extra) -> dict:
    payload = report_json(reports, k_test, **extra)
    _atomic_write(Path(path), (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    return payload


def read_report(path) -> list:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return [RetrievalReport.from_dict(d) for d in payload["reports"]]


# --- persistence ---------------------------------------------------------------------------

def _atomic_write(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def index_to_bytes(index: EmbeddingIndex) -> bytes:
    parts = [MAGIC, struct.pack("<HIQ", VERSION, index.dim, len(index.entries))]
    for e in index.entries:
        raw_id = e.id.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_id)))
        parts.append(raw_id)
        parts.append(struct.pack("<B", MODALITIES.index(e.modality)))
        parts.append(e.vector.astype("<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def index_from_bytes(blob: bytes) -> EmbeddingIndex:
    if len(blob) < len(MAGIC) or blob[:len(MAGIC)] != MAGIC:
        raise BadMagic("not an embedding index file")
    if len(blob) < len(MAGIC) + 14 + 4:
        raise ChecksumMismatch("index file truncated")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumMismatch("index checksum does not match")
    version, dim, count = struct.unpack_from("<HIQ", body, len(MAGIC))
    if version != VERSION:
        raise VersionMismatch(f"index version {version}, expected {VERSION}")
    pos = len(MAGIC) + 14
    entries = []
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", body, pos)
            pos += 4
            rid = body[pos:pos + n].decode("utf-8")
            pos += n
            modality = MODALITIES[body[pos]]
            pos += 1
            vec = np.frombuffer(body, dtype="<f4", count=dim, offset=pos).astype(np.float32)
            pos += 4 * dim
            entries.append(Embedding(rid, modality, vec))
    except (struct.error, IndexError, ValueError, UnicodeDecodeError) as exc:
        raise ChecksumMismatch(f"index body is inconsistent: {exc}") from exc
    if pos != len(body):
        raise ChecksumMismatch("trailing bytes in index body")
    return EmbeddingIndex(dim, tuple(entries))


def save_index(index: EmbeddingIndex, path) -> Path:
    path = Path(path)
    _atomic_write(path, index_to_bytes(index))
    return path


def load_index(path) -> EmbeddingIndex:
    return index_from_bytes(Path(path).read_bytes())
