import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from ecgfield.errors import BadMagic, ChecksumMismatch, DimMismatch, MissingTruth, VersionMismatch
from ecgfield.retrieval import (Embedding, EmbeddingIndex, RetrievalReport, evaluate, index_from_bytes,
                                index_to_bytes, load_index, rank, read_report, recall_at_k, rsum,
                                save_index, similarity, unit, write_report)


def _random_index(rng, pairs, dim=8, prefix="p"):
    ids = [f"{prefix}{k:04d}" for k in range(pairs)]
    img = rng.normal(size=(pairs, dim))
    txt = rng.normal(size=(pairs, dim))
    img /= np.linalg.norm(img, axis=1, keepdims=True)
    txt /= np.linalg.norm(txt, axis=1, keepdims=True)
    return EmbeddingIndex.from_arrays(ids, img, txt)


def test_similarity_examples():
    e = np.eye(3)
    assert similarity(Embedding("a", "image", e[0]), Embedding("b", "text", e[0])) == pytest.approx(1)
    assert similarity(Embedding("a", "image", e[0]), Embedding("b", "text", e[1])) == 0
    assert similarity(Embedding("a", "image", e[2]), Embedding("b", "text", -e[2])) == pytest.approx(-1)


def test_embedding_must_be_unit():
    with pytest.raises(ValueError):
        Embedding("a", "image", [1.0, 1.0])
    with pytest.raises(ValueError):
        Embedding("a", "audio", [1.0])


def test_rank_examples(rng):
    q = Embedding("q", "image", unit([1, 2, 3]))
    cands = [Embedding(f"c{k}", "text", unit(rng.normal(size=3))) for k in range(5)]
    cands.append(Embedding("hit", "text", unit([1, 2, 3])))
    assert rank(q, cands)[0] == "hit"
    tied = [Embedding("b", "text", unit([1, 0, 0])), Embedding("a", "text", unit([1, 0, 0]))]
    assert rank(Embedding("q", "image", unit([1, 1, 0])), tied) == ["a", "b"]


def test_rank_against_full_sort(rng):
    q = Embedding("q", "text", unit(rng.normal(size=16)))
    cands = [Embedding(f"c{k:03d}", "image", unit(rng.normal(size=16))) for k in range(50)]
    scores = {c.id: float(np.dot(q.vector.astype(float), c.vector.astype(float))) for c in cands}
    assert rank(q, cands) == sorted(scores, key=lambda c: (-scores[c], c))
    assert rank(q, cands, k_test=7) == rank(q, cands)[:7]


def test_rank_errors():
    q = Embedding("q", "image", [1.0, 0.0])
    with pytest.raises(DimMismatch):
        rank(q, [Embedding("c", "text", [1.0, 0.0, 0.0])])
    with pytest.raises(ValueError):
        rank(q, [Embedding("c", "image", [1.0, 0.0])])


def test_recall_examples():
    truth = {"a": "a", "b": "b", "c": "c"}
    assert recall_at_k({q: [q, "x"] for q in truth}, truth, 1) == 1.0
    ranks = {"a": 1, "b": 2, "c": 7}
    lists = {q: ["z"] * (r - 1) + [q] + ["y"] * 5 for q, r in ranks.items()}
    assert recall_at_k(lists, truth, 1) == pytest.approx(1 / 3)
    assert recall_at_k(lists, truth, 5) == pytest.approx(2 / 3)
    assert recall_at_k(lists, truth, 10) == 1.0
    assert recall_at_k({"a": ["b", "a"]}, truth, 50) == 1.0
    with pytest.raises(MissingTruth):
        recall_at_k({"q": ["a"]}, truth, 1)


def test_rsum_examples():
    assert rsum((7.88, 24.51, 34.04, 8.27, 23.96, 34.91)) == pytest.approx(133.57, abs=1e-9)
    assert rsum([100] * 6) == 600 and rsum([0] * 6) == 0
    with pytest.raises(ValueError):
        rsum([1, 2, 3])


def test_identity_corpus_rsum_600(rng):
    vecs = rng.normal(size=(20, 6))
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    reports = evaluate(EmbeddingIndex.from_arrays([f"r{k}" for k in range(20)], vecs, vecs))
    assert all(r.r_at[1] == 1.0 for r in reports)
    assert reports[0].rsum == 600.0


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 60), st.integers(2, 8), st.integers(0, 10**6))
def test_evaluate_matches_enumeration(pairs, dim, seed):
    rng = np.random.default_rng(seed)
    index = _random_index(rng, pairs, dim)
    reports = evaluate(index, (1, 5, 10))
    img, txt = index.of("image"), index.of("text")
    dot = lambda a, b: float(np.dot(a.vector.astype(float), b.vector.astype(float)))  # noqa: E731
    i2t = {i.id: {t.id: dot(i, t) for t in txt} for i in img}
    t2i = {t.id: {i.id: dot(t, i) for i in img} for t in txt}
    truth = {e.id: e.id for e in img}
    for k in (1, 5, 10):
        assert reports[0].r_at[k] == oracles.recall_enumerated(i2t, truth, k)
        assert reports[1].r_at[k] == oracles.recall_enumerated(t2i, truth, k)
    for r in reports:
        vals = [r.r_at[k] for k in (1, 5, 10)]
        assert vals == sorted(vals)


def test_random_embeddings_near_chance():
    rng = np.random.default_rng(7)
    p = 40
    r1 = [evaluate(_random_index(rng, p, 16), (1,))[0].r_at[1] for _ in range(50)]
    sigma = np.sqrt((1 / p) * (1 - 1 / p) / (p * 50))
    assert abs(np.mean(r1) - 1 / p) <= 3 * sigma


def test_report_round_trip(tmp_path, rng):
    reports = evaluate(_random_index(rng, 12))
    write_report(reports, tmp_path / "r.json", 128, note="x")
    assert read_report(tmp_path / "r.json") == reports
    payload = json.loads((tmp_path / "r.json").read_text())
    assert payload["note"] == "x" and payload["rsum"] == reports[0].rsum
    assert RetrievalReport.from_dict(reports[1].to_dict()) == reports[1]


def test_index_round_trip(tmp_path, rng):
    index = _random_index(rng, 50, 12)
    back = load_index(save_index(index, tmp_path / "i.bin"))
    assert back == index and len(back) == 100
    assert index_to_bytes(back) == index_to_bytes(index)


def test_empty_index_round_trip():
    empty = EmbeddingIndex(4, ())
    assert index_from_bytes(index_to_bytes(empty)) == empty


def test_index_corruption(rng):
    blob = bytearray(index_to_bytes(_random_index(rng, 5)))
    for pos in (20, len(blob) // 2, len(blob) - 2):
        bad = bytearray(blob)
        bad[pos] ^= 0x01
        with pytest.raises(ChecksumMismatch):
            index_from_bytes(bytes(bad))
    with pytest.raises(BadMagic):
        index_from_bytes(b"XXXXXXXX" + bytes(blob[8:]))


def test_index_version_checked(rng):
    import struct
    import zlib
    blob = index_to_bytes(_random_index(rng, 3))
    body = bytearray(blob[:-4])
    struct.pack_into("<H", body, 8, 99)
    with pytest.raises(VersionMismatch):
        index_from_bytes(bytes(body) + struct.pack("<I", zlib.crc32(bytes(body))))


def test_index_rejects_duplicates_and_dims():
    with pytest.raises(ValueError):
        EmbeddingIndex(1, (Embedding("a", "image", [1.0]), Embedding("a", "image", [1.0])))
    with pytest.raises(DimMismatch):
        EmbeddingIndex(2, (Embedding("a", "image", [1.0]),))
