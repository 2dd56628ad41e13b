"""
Semantic chunking and an exact-scan cosine vector index with metadata filters.

Persistence layout (one directory)::

    manifest.json    {"format_version", "dimension", "count"}
    chunks.jsonl     one chunk (metadata + text) per line
    embeddings.bin   row-major little-endian float32, row i <-> line i
"""

from __future__ import annotations

import datetime as dt
import json
import os
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import audit
from .errors import DimensionMismatch, FormatVersionMismatch, PersistenceError, PreconditionError

FORMAT_VERSION = 1
DEFAULT_BREAKPOINT_PERCENTILE = 80.0
DEFAULT_MAX_CHUNK_CHARS = 4000

_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")


@dataclass(frozen=True)
class ChunkMeta:
    publication_date: dt.date
    publisher: str
    source_kind: str


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    ordinal: int
    text: str
    embedding: np.ndarray
    meta: ChunkMeta

    def record(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "doc_id": self.doc_id,
            "ordinal": self.ordinal,
            "text": self.text,
            "publication_date": self.meta.publication_date.isoformat(),
            "publisher": self.meta.publisher,
            "source_kind": self.meta.source_kind,
        }


def make_chunk_id(doc_id: str, ordinal: int) -> str:
    return f"{doc_id}#{ordinal:04d}"


@dataclass(frozen=True)
class ChunkQuery:
    query_vector: np.ndarray
    top_n: int = 5
    date_range: tuple[dt.date, dt.date] | None = None
    publishers: frozenset[str] | None = None
    source_kinds: frozenset[str] | None = None

    def __post_init__(self):
        if self.top_n < 1:
            raise PreconditionError("top_n must be >= 1")
        if self.date_range is not None and self.date_range[0] > self.date_range[1]:
            raise PreconditionError("date_range start must not be after its end")
        if self.publishers is not None:
            object.__setattr__(self, "publishers", frozenset(self.publishers))
        if self.source_kinds is not None:
            object.__setattr__(self, "source_kinds", frozenset(self.source_kinds))


@dataclass(frozen=True)
class ScoredChunk:
    chunk: Chunk
    score: float
    fusion_score: float | None = None


# ---------------------------------------------------------------------------
# chunking


def split_sentences(text: str) -> list[tuple[int, int]]:
    """Character spans of sentences; a sentence ends at . ! or ? followed by whitespace."""
    spans = []
    start = 0
    for m in _SENTENCE_END.finditer(text):
        if text[start:m.start()].strip():
            spans.append((start, m.start()))
        start = m.end()
    if text[start:].strip():
        spans.append((start, len(text.rstrip())))
    # leading whitespace of the first sentence is not part of it
    return [(a + (len(text[a:b]) - len(text[a:b].lstrip())), b) for a, b in spans]


def _hard_split(text: str, limit: int) -> list[str]:
    return [text[i:i + limit] for i in range(0, len(text), limit)]


def semantic_chunk(
    cleaned_text: str,
    gateway,
    breakpoint_percentile: float = DEFAULT_BREAKPOINT_PERCENTILE,
    max_chunk_chars: int = DEFAULT_MAX_CHUNK_CHARS,
) -> list[str]:
    """Split text where consecutive-sentence embedding distance spikes.

    Distances are ``1 - cosine`` between neighbouring sentences. A boundary is
    placed after sentence i when its distance to sentence i+1 is strictly
    above the given percentile (linear interpolation) of all distances.
    Chunks longer than ``max_chunk_chars`` are split again at sentence
    boundaries (a single oversized sentence is cut at the character limit).
    """
    if not cleaned_text.strip():
        raise PreconditionError("cannot chunk empty text")
    if not 0 < breakpoint_percentile < 100:
        raise PreconditionError("breakpoint_percentile must be in (0, 100)")
    spans = split_sentences(cleaned_text)
    if len(spans) == 1:
        a, b = spans[0]
        return _hard_split(cleaned_text[a:b], max_chunk_chars)
    vecs = gateway.embed([cleaned_text[a:b] for a, b in spans])
    norms = np.linalg.norm(vecs, axis=1)
    unit = vecs / np.where(norms > 0, norms, 1.0)[:, None]
    dist = 1.0 - np.einsum("ij,ij->i", unit[:-1], unit[1:])
    threshold = np.percentile(dist, breakpoint_percentile)
    groups: list[list[int]] = [[0]]
    for i, d in enumerate(dist):
        if d > threshold:
            groups.append([])
        groups[-1].append(i + 1)

    chunks: list[str] = []

    def emit(run: list[int]) -> None:
        chunks.extend(_hard_split(cleaned_text[spans[run[0]][0]:spans[run[-1]][1]], max_chunk_chars))

    for g in groups:
        run = [g[0]]
        for si in g[1:]:
            if spans[si][1] - spans[run[0]][0] > max_chunk_chars:
                emit(run)
                run = [si]
            else:
                run.append(si)
        emit(run)
    return chunks


def chunk_document(doc, gateway, **kw) -> list[Chunk]:
    """Chunk a cleaned document and embed the chunks."""
    if doc.relevance != "relevant":
        raise PreconditionError(f"{doc.doc_id} is not relevant; refusing to index")
    texts = semantic_chunk(doc.cleaned_text, gateway, **kw)
    vecs = gateway.embed(texts)
    meta = ChunkMeta(doc.publication_date, doc.publisher, doc.source_kind)
    return [Chunk(make_chunk_id(doc.doc_id, i), doc.doc_id, i, t, np.asarray(v, dtype=np.float32), meta) for i, (t, v) in enumerate(zip(texts, vecs))]


# ---------------------------------------------------------------------------
# index


class VectorIndex:
    """Exact cosine-similarity index over chunks of a fixed embedding dimension.

    Results are ordered by score (descending), then publication date (newest
    first), then chunk id. Reads and writes are serialized by a lock, so a
    search never sees a half-applied upsert.
    """

    def __init__(self, dimension: int):
        if dimension < 1:
            raise PreconditionError("dimension must be positive")
        self.dimension = dimension
        self._chunks: list[Chunk] = []
        self._pos: dict[tuple[str, int], int] = {}
        self._matrix = np.zeros((0, dimension), dtype=np.float32)
        self._unit = np.zeros((0, dimension), dtype=np.float64)
        self._date_ord = np.zeros(0, dtype=np.int64)
        self._id_rank = np.zeros(0, dtype=np.int64)
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self._chunks)

    @property
    def chunks(self) -> list[Chunk]:
        with self._lock:
            return list(self._chunks)

    def doc_ids(self) -> set[str]:
        with self._lock:
            return {c.doc_id for c in self._chunks}

    def upsert_chunks(self, chunks: Iterable[Chunk]) -> int:
        chunks = list(chunks)
        for c in chunks:
            emb = np.asarray(c.embedding)
            if emb.shape != (self.dimension,):
                raise DimensionMismatch(f"chunk {c.chunk_id} has shape {emb.shape}, index expects ({self.dimension},)")
            if not np.all(np.isfinite(emb)):
                raise PreconditionError(f"chunk {c.chunk_id} has a non-finite embedding")
            if not c.text:
                raise PreconditionError(f"chunk {c.chunk_id} has empty text")
        changed = 0
        with self._lock:
            rows = list(self._chunks)
            embs = list(self._matrix)
            for c in chunks:
                c = Chunk(c.chunk_id, c.doc_id, c.ordinal, c.text, np.asarray(c.embedding, dtype=np.float32), c.meta)
                key = (c.doc_id, c.ordinal)
                i = self._pos.get(key)
                if i is None:
                    self._pos[key] = len(rows)
                    rows.append(c)
                    embs.append(c.embedding)
                else:
                    old = rows[i]
                    if (old.chunk_id, old.text, old.meta) == (c.chunk_id, c.text, c.meta) and np.array_equal(old.embedding, c.embedding):
                        continue
                    rows[i] = c
                    embs[i] = c.embedding
                changed += 1
            self._chunks = rows
            self._matrix = np.vstack(embs).astype(np.float32) if embs else np.zeros((0, self.dimension), dtype=np.float32)
            self._refresh()
        return changed

    def _refresh(self) -> None:
        m = self._matrix.astype(np.float64)
        norms = np.linalg.norm(m, axis=1)
        self._unit = m / np.where(norms > 0, norms, 1.0)[:, None]
        self._date_ord = np.array([c.meta.publication_date.toordinal() for c in self._chunks], dtype=np.int64)
        order = sorted(range(len(self._chunks)), key=lambda i: self._chunks[i].chunk_id)
        rank = np.empty(len(order), dtype=np.int64)
        rank[order] = np.arange(len(order))
        self._id_rank = rank

    def _mask(self, q: ChunkQuery) -> np.ndarray:
        mask = np.ones(len(self._chunks), dtype=bool)
        if q.date_range is not None:
            lo, hi = q.date_range
            mask &= (self._date_ord >= lo.toordinal()) & (self._date_ord <= hi.toordinal())
        if q.publishers is not None:
            mask &= np.array([c.meta.publisher in q.publishers for c in self._chunks], dtype=bool)
        if q.source_kinds is not None:
            mask &= np.array([c.meta.source_kind in q.source_kinds for c in self._chunks], dtype=bool)
        return mask

    def count(self, q: ChunkQuery) -> int:
        with self._lock:
            return int(self._mask(q).sum())

    def search(self, q: ChunkQuery) -> list[ScoredChunk]:
        qv = np.asarray(q.query_vector, dtype=np.float64)
        if qv.shape != (self.dimension,):
            raise DimensionMismatch(f"query has shape {qv.shape}, index expects ({self.dimension},)")
        qn = np.linalg.norm(qv)
        with self._lock:
            idx = np.nonzero(self._mask(q))[0]
            if len(idx) == 0:
                return []
            scores = self._unit[idx] @ (qv / qn) if qn > 0 else np.zeros(len(idx))
            scores = np.clip(scores, -1.0, 1.0)
            order = np.lexsort((self._id_rank[idx], -self._date_ord[idx], -scores))[: q.top_n]
            out = [ScoredChunk(self._chunks[idx[k]], float(scores[k])) for k in order]
        for s in out:
            audit.note("chunk", s.chunk.chunk_id, s.chunk.meta.publication_date)
        return out

    def score_all(self, vector: Sequence[float]) -> dict[str, float]:
        """Cosine score of every chunk against ``vector`` (no filter, no ordering)."""
        qv = np.asarray(vector, dtype=np.float64)
        qn = np.linalg.norm(qv)
        with self._lock:
            s = np.clip(self._unit @ (qv / qn), -1.0, 1.0) if qn > 0 else np.zeros(len(self._chunks))
            return {c.chunk_id: float(v) for c, v in zip(self._chunks, s)}

    # -- persistence ----------------------------------------------------

    def persist(self, dir_path: str | os.PathLike) -> None:
        d = Path(dir_path)
        with self._lock:
            try:
                d.mkdir(parents=True, exist_ok=True)
                with open(d / "chunks.jsonl", "w", encoding="utf-8") as fh:
                    for c in self._chunks:
                        fh.write(json.dumps(c.record(), ensure_ascii=False, sort_keys=True) + "\n")
                self._matrix.astype("<f4").tofile(d / "embeddings.bin")
                manifest = {"format_version": FORMAT_VERSION, "dimension": self.dimension, "count": len(self._chunks)}
                (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
            except OSError as exc:
                raise PersistenceError(f"cannot persist index to {d}: {exc}") from exc

    @classmethod
    def load(cls, dir_path: str | os.PathLike) -> "VectorIndex":
        d = Path(dir_path)
        try:
            manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise FormatVersionMismatch(f"{d} has no index manifest") from exc
        except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise PersistenceError(f"unreadable manifest in {d}: {exc}") from exc
        if not isinstance(manifest, dict) or manifest.get("format_version") != FORMAT_VERSION:
            raise FormatVersionMismatch(f"{d}: unsupported index format {manifest!r:.80}")
        try:
            dim, count = int(manifest["dimension"]), int(manifest["count"])
            with open(d / "chunks.jsonl", encoding="utf-8") as fh:
                records = [json.loads(line) for line in fh if line.strip()]
            emb = np.fromfile(d / "embeddings.bin", dtype="<f4")
        except (OSError, KeyError, ValueError, TypeError) as exc:
            raise PersistenceError(f"corrupt index in {d}: {exc}") from exc
        if len(records) != count or emb.size != count * dim:
            raise PersistenceError(f"{d}: manifest count/dimension does not match stored data")
        emb = emb.reshape(count, dim)
        index = cls(dim)
        chunks = [
            Chunk(
                r["chunk_id"],
                r["doc_id"],
                int(r["ordinal"]),
                r["text"],
                emb[i].astype(np.float32),
                ChunkMeta(dt.date.fromisoformat(r["publication_date"]), r["publisher"], r["source_kind"]),
            )
            for i, r in enumerate(records)
        ]
        index.upsert_chunks(chunks)
        return index


def load_or_create(dir_path: str | os.PathLike, dimension: int) -> VectorIndex:
    d = Path(dir_path)
    if not (d / "manifest.json").exists():
        return VectorIndex(dimension)
    index = VectorIndex.load(d)
    if index.dimension != dimension:
        raise DimensionMismatch(f"index at {d} has dimension {index.dimension}, expected {dimension}")
    return index
