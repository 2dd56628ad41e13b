import datetime as dt
import json
import math

import numpy as np
import pytest

from marketsense.errors import DimensionMismatch, FormatVersionMismatch, PersistenceError, PreconditionError
from marketsense.gateway import Cassette, Gateway, MockEmbedder
from marketsense.index import Chunk, ChunkMeta, ChunkQuery, VectorIndex, make_chunk_id, semantic_chunk, split_sentences


def _gw(emb):
    return Gateway("replay", Cassette(), embedder=emb)


def _chunk(i, vec, day=dt.date(2024, 1, 1), publisher="Fed", kind="macro_report", doc="d"):
    return Chunk(make_chunk_id(doc, i), doc, i, f"text {doc} {i}", np.asarray(vec, dtype=np.float32), ChunkMeta(day, publisher, kind))


def _unit(a):
    return [math.cos(a), math.sin(a)]


def test_planted_three_sentences_split_after_second():
    s1, s2, s3 = "Rates were held.", "Policy stays tight.", "Tourism boomed."
    t2 = math.acos(0.95)
    t3 = t2 + math.acos(0.10)
    emb = MockEmbedder(2, overrides={s1: _unit(0.0), s2: _unit(t2), s3: _unit(t3)})
    # oracle: distances [0.05, 0.90]; 80th percentile = 0.05 + 0.8 * 0.85 = 0.73; only 0.90 exceeds it
    d = [1 - 0.95, 1 - 0.10]
    threshold = d[0] + 0.8 * (d[1] - d[0])
    assert [x > threshold for x in d] == [False, True]
    assert semantic_chunk(f"{s1} {s2} {s3}", _gw(emb)) == [f"{s1} {s2}", s3]


def test_single_sentence_is_one_chunk():
    text = "Just one sentence without a terminator"
    assert semantic_chunk(text, _gw(MockEmbedder(4))) == [text]


def test_identical_embeddings_give_one_chunk():
    sents = [f"Sentence {i}." for i in range(6)]
    emb = MockEmbedder(3, overrides={s: [1, 1, 1] for s in sents})
    text = " ".join(sents)
    assert semantic_chunk(text, _gw(emb)) == [text]


def test_max_chunk_chars_hard_split_and_coverage():
    rng = np.random.default_rng(0)
    words = ["alpha", "beta", "gamma", "delta", "growth", "rates"]
    sents = [" ".join(rng.choice(words, size=rng.integers(3, 30))).capitalize() + "." for _ in range(200)]
    text = " ".join(sents)
    chunks = semantic_chunk(text, _gw(MockEmbedder(16, seed=2)), max_chunk_chars=300)
    assert all(1 <= len(c) <= 300 for c in chunks)
    assert "".join("".join(c.split()) for c in chunks) == "".join(text.split())


def test_split_sentences_spans():
    text = "  One. Two!  Three?\nFour"
    assert [text[a:b] for a, b in split_sentences(text)] == ["One.", "Two!", "Three?", "Four"]


def test_empty_text_rejected():
    with pytest.raises(PreconditionError):
        semantic_chunk("   ", _gw(MockEmbedder(2)))


def test_hand_cosines():
    idx = VectorIndex(2)
    idx.upsert_chunks([_chunk(0, [1, 0]), _chunk(1, [math.sqrt(2) / 2, math.sqrt(2) / 2])])
    res = idx.search(ChunkQuery(np.array([1.0, 0.0]), top_n=2))
    assert [r.chunk.ordinal for r in res] == [0, 1]
    assert res[0].score == pytest.approx(1.0, abs=1e-7)
    assert res[1].score == pytest.approx(0.7071, abs=1e-4)


def test_identity_and_orthogonal_queries():
    idx = VectorIndex(3)
    idx.upsert_chunks([_chunk(0, [1, 0, 0]), _chunk(1, [0, 1, 0])])
    assert idx.search(ChunkQuery(np.array([0.0, 1.0, 0.0]), 1))[0].chunk.ordinal == 1
    res = idx.search(ChunkQuery(np.array([0.0, 0.0, 1.0]), 5))
    assert [r.score for r in res] == [0.0, 0.0]


def test_upsert_idempotent_and_dimension_checked():
    idx = VectorIndex(2)
    chunks = [_chunk(i, [1, i]) for i in range(5)]
    assert idx.upsert_chunks(chunks) == 5
    assert idx.upsert_chunks(chunks) == 0
    assert idx.upsert_chunks([_chunk(i, [1, i], doc="e") for i in range(3)]) == 3
    assert len(idx) == 8
    with pytest.raises(DimensionMismatch):
        idx.upsert_chunks([_chunk(9, [1, 0, 0])])
    with pytest.raises(DimensionMismatch):
        idx.search(ChunkQuery(np.ones(3), 1))


def test_ties_break_by_recency_then_chunk_id():
    idx = VectorIndex(2)
    idx.upsert_chunks([
        _chunk(0, [1, 0], day=dt.date(2024, 1, 1), doc="b"),
        _chunk(0, [1, 0], day=dt.date(2024, 1, 2), doc="c"),
        _chunk(0, [1, 0], day=dt.date(2024, 1, 1), doc="a"),
    ])
    res = idx.search(ChunkQuery(np.array([1.0, 0.0]), 3))
    assert [r.chunk.doc_id for r in res] == ["c", "a", "b"]


def test_metadata_filters_are_sound():
    rng = np.random.default_rng(1)
    idx = VectorIndex(4)
    pubs = ["Fed", "ECB", "IMF"]
    chunks = [
        _chunk(i, rng.standard_normal(4), day=dt.date(2024, 1, 1) + dt.timedelta(days=int(i % 40)), publisher=pubs[i % 3], kind=("macro_report", "sec_filing")[i % 2])
        for i in range(120)
    ]
    idx.upsert_chunks(chunks)
    lo, hi = dt.date(2024, 1, 10), dt.date(2024, 1, 20)
    q = ChunkQuery(rng.standard_normal(4), 200, (lo, hi), {"Fed", "IMF"}, {"macro_report"})
    res = idx.search(q)
    expected = [c for c in chunks if lo <= c.meta.publication_date <= hi and c.meta.publisher in {"Fed", "IMF"} and c.meta.source_kind == "macro_report"]
    assert len(res) == len(expected) > 0
    for r in res:
        assert lo <= r.chunk.meta.publication_date <= hi
        assert r.chunk.meta.publisher in {"Fed", "IMF"} and r.chunk.meta.source_kind == "macro_report"
        assert -1 - 1e-12 <= r.score <= 1 + 1e-12
    assert idx.search(ChunkQuery(np.ones(4), 3, (dt.date(2030, 1, 1), dt.date(2030, 2, 1)))) == []


def test_query_invariants():
    with pytest.raises(PreconditionError):
        ChunkQuery(np.ones(2), 0)
    with pytest.raises(PreconditionError):
        ChunkQuery(np.ones(2), 1, (dt.date(2024, 2, 1), dt.date(2024, 1, 1)))


def test_persist_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    idx = VectorIndex(8)
    idx.upsert_chunks([_chunk(i, rng.standard_normal(8), day=dt.date(2024, 1, 1 + i % 28)) for i in range(50)])
    idx.persist(tmp_path / "ix")
    back = VectorIndex.load(tmp_path / "ix")
    assert len(back) == 50
    for _ in range(10):
        q = ChunkQuery(rng.standard_normal(8), 7)
        a, b = idx.search(q), back.search(q)
        assert [(x.chunk.chunk_id, x.score) for x in a] == [(y.chunk.chunk_id, y.score) for y in b]
    manifest = json.loads((tmp_path / "ix" / "manifest.json").read_text())
    assert manifest == {"format_version": 1, "dimension": 8, "count": 50}
    raw = np.fromfile(tmp_path / "ix" / "embeddings.bin", dtype="<f4").reshape(50, 8)
    np.testing.assert_array_equal(raw[3], idx.chunks[3].embedding)


def test_load_failures(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(FormatVersionMismatch):
        VectorIndex.load(tmp_path / "empty")
    idx = VectorIndex(2)
    idx.upsert_chunks([_chunk(0, [1, 0])])
    idx.persist(tmp_path / "ix")
    (tmp_path / "ix" / "manifest.json").write_text("{not json")
    with pytest.raises(PersistenceError):
        VectorIndex.load(tmp_path / "ix")
    (tmp_path / "ix" / "manifest.json").write_text(json.dumps({"format_version": 99, "dimension": 2, "count": 1}))
    with pytest.raises(FormatVersionMismatch):
        VectorIndex.load(tmp_path / "ix")
    (tmp_path / "ix" / "manifest.json").write_text(json.dumps({"format_version": 1, "dimension": 2, "count": 5}))
    with pytest.raises(PersistenceError):
        VectorIndex.load(tmp_path / "ix")


def brute_force(vectors, meta_dates, ids, q, top_n):
    qn = q / np.linalg.norm(q)
    rows = []
    for v, d, cid in zip(vectors, meta_dates, ids):
        v = np.asarray(v, dtype=np.float64)
        s = float(np.dot(v, qn) / np.linalg.norm(v))
        rows.append((-s, -d.toordinal(), cid, s))
    rows.sort()
    return [(r[2], r[3]) for r in rows[:top_n]]


def test_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(3)
    for trial in range(20):
        n, d = int(rng.integers(1, 300)), int(rng.integers(2, 20))
        vecs = rng.standard_normal((n, d)).astype(np.float32)
        days = [dt.date(2024, 1, 1) + dt.timedelta(days=int(k)) for k in rng.integers(0, 5, n)]
        idx = VectorIndex(d)
        idx.upsert_chunks([_chunk(i, vecs[i], day=days[i]) for i in range(n)])
        q = rng.standard_normal(d)
        top = int(rng.integers(1, 20))
        got = [(r.chunk.chunk_id, r.score) for r in idx.search(ChunkQuery(q, top))]
        want = brute_force(vecs, days, [make_chunk_id("d", i) for i in range(n)], q, top)
        assert [g[0] for g in got] == [w[0] for w in want]
        np.testing.assert_allclose([g[1] for g in got], [w[1] for w in want], rtol=0, atol=1e-9)
