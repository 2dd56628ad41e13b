"""
Date-aware retrieval over the macro corpus and grounded answer synthesis.

Three retrieval methods share the same metadata filter (a look-back window
ending at the request's ``as_of_date``):

* ``simple``: embed the query, cosine top-n.
* ``hyde``: embed an LLM-written hypothetical answer together with the query;
  search with the normalized mean of the two vectors.
* ``optimized``: LLM query expansion into several variants; each variant and
  the original are searched separately and merged by reciprocal rank fusion.
"""

from __future__ import annotations

import datetime as dt
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyCorpus, EmptyHypothetical, MissingSections, PreconditionError, VariantParseError
from .index import ChunkQuery, ScoredChunk, VectorIndex
from .prompts import DEFAULT_LIBRARY, PromptLibrary
from .reports import AgentReport

METHODS = ("simple", "optimized", "hyde")
RRF_K = 60
DEFAULT_LOOKBACK_DAYS = 30
DEFAULT_VARIANTS = 3

MACRO_QUERIES = (
    "U.S. macro outlook",
    "investment opportunities and risks",
    "contradictory market signals",
    "risk factors and negative indicators",
)
MACRO_SECTIONS = (
    "Global Market Consensus",
    "Contradictory Market Signals",
    "Positive Market Indicators",
    "Risk Factors & Negative Indicators",
)


@dataclass(frozen=True)
class RetrievalRequest:
    query_text: str
    as_of_date: dt.date
    method: str = "hyde"
    top_n: int = 5
    lookback_days: int = DEFAULT_LOOKBACK_DAYS
    publishers: frozenset[str] | None = None
    source_kinds: frozenset[str] | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise PreconditionError(f"method must be one of {METHODS}")
        if self.top_n < 1 or self.lookback_days < 1:
            raise PreconditionError("top_n and lookback_days must be positive")
        if not self.query_text.strip():
            raise PreconditionError("empty query")

    @property
    def window(self) -> tuple[dt.date, dt.date]:
        return (self.as_of_date - dt.timedelta(days=self.lookback_days), self.as_of_date)

    def chunk_query(self, vector) -> ChunkQuery:
        return ChunkQuery(np.asarray(vector), self.top_n, self.window, self.publishers, self.source_kinds)


@dataclass
class GroundedAnswer:
    answer_text: str
    supporting_chunks: list[ScoredChunk]
    method: str
    query_variants: list[str] = field(default_factory=list)
    hypothetical_doc: str = ""

    def to_dict(self) -> dict:
        return {
            "answer_text": self.answer_text,
            "method": self.method,
            "query_variants": list(self.query_variants),
            "hypothetical_doc": self.hypothetical_doc,
            "supporting_chunks": [scored_chunk_dict(s) for s in self.supporting_chunks],
        }


def scored_chunk_dict(s: ScoredChunk) -> dict:
    d = {"score": s.score, **s.chunk.record()}
    if s.fusion_score is not None:
        d["fusion_score"] = s.fusion_score
    return d


def rrf_fuse(ranked_lists: Sequence[Sequence[str]], k: int = RRF_K) -> list[tuple[str, float, int]]:
    """Reciprocal rank fusion of ranked id lists.

    Returns ``(id, fused_score, best_rank)`` sorted by fused score descending,
    then best single-list rank, then id. Ranks start at 1.
    """
    fused: dict[str, float] = {}
    best: dict[str, int] = {}
    for lst in ranked_lists:
        for rank, cid in enumerate(lst, 1):
            fused[cid] = fused.get(cid, 0.0) + 1.0 / (k + rank)
            best[cid] = min(best.get(cid, rank), rank)
    return sorted(((c, fused[c], best[c]) for c in fused), key=lambda t: (-t[1], t[2], t[0]))


def parse_lines(text: str) -> list[str]:
    """Non-empty lines with list markers ("1.", "-", "*") stripped."""
    out = []
    for line in text.splitlines():
        line = re.sub(r"^\s*(?:[-*•]|\(?\d+[.)])\s*", "", line).strip().strip('"').strip()
        if line:
            out.append(line)
    return out


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


class Retriever:
    def __init__(self, index: VectorIndex, gateway, prompts: PromptLibrary = DEFAULT_LIBRARY):
        self.index = index
        self.gateway = gateway
        self.prompts = prompts

    def _embed_one(self, text: str) -> np.ndarray:
        return self.gateway.embed([text])[0]

    def retrieve_simple(self, req: RetrievalRequest) -> list[ScoredChunk]:
        return self.index.search(req.chunk_query(self._embed_one(req.query_text)))

    def hypothetical_document(self, req: RetrievalRequest) -> str:
        system, user = self.prompts.render("hyde", query=req.query_text, as_of=req.as_of_date.isoformat())
        hyp = self.gateway.chat(user, system=system, tag="hyde").strip()
        if not hyp:
            raise EmptyHypothetical(f"no hypothetical document for {req.query_text!r}")
        return hyp

    def retrieve_hyde(self, req: RetrievalRequest) -> tuple[list[ScoredChunk], str]:
        hyp = self.hypothetical_document(req)
        vecs = self.gateway.embed([hyp, req.query_text])
        mean = (_unit(vecs[0]) + _unit(vecs[1])) / 2.0
        vector = _unit(mean) if np.linalg.norm(mean) > 1e-12 else _unit(vecs[1])
        return self.index.search(req.chunk_query(vector)), hyp

    def query_variants(self, req: RetrievalRequest, n_variants: int = DEFAULT_VARIANTS) -> list[str]:
        if n_variants < 1:
            raise PreconditionError("n_variants must be >= 1")
        system, user = self.prompts.render("query_variants", query=req.query_text, n=n_variants)
        variants = parse_lines(self.gateway.chat(user, system=system, tag="query-variants"))[:n_variants]
        if not variants:
            raise VariantParseError(f"no parseable query variants for {req.query_text!r}")
        return variants

    def retrieve_optimized(self, req: RetrievalRequest, n_variants: int = DEFAULT_VARIANTS, variants: list[str] | None = None) -> list[ScoredChunk]:
        """Search the original query and each variant, fuse with RRF, keep top-n.

        ``score`` on the returned chunks is cosine similarity to the original
        query; ``fusion_score`` is the RRF value that determined the order.
        """
        if variants is None:
            variants = self.query_variants(req, n_variants)
        texts = [req.query_text] + list(variants)
        vecs = self.gateway.embed(texts)
        lists = [self.index.search(req.chunk_query(v)) for v in vecs]
        by_id = {s.chunk.chunk_id: s.chunk for lst in lists for s in lst}
        fused = rrf_fuse([[s.chunk.chunk_id for s in lst] for lst in lists])[: req.top_n]
        q = _unit(np.asarray(vecs[0], dtype=np.float64))
        out = []
        for cid, fscore, _ in fused:
            chunk = by_id[cid]
            cos = float(np.clip(_unit(chunk.embedding.astype(np.float64)) @ q, -1.0, 1.0))
            out.append(ScoredChunk(chunk, cos, fscore))
        return out

    def retrieve(self, req: RetrievalRequest, n_variants: int = DEFAULT_VARIANTS) -> tuple[list[ScoredChunk], list[str], str]:
        """Dispatch on ``req.method``; returns chunks, query variants and hypothetical doc."""
        if req.method == "simple":
            return self.retrieve_simple(req), [], ""
        if req.method == "hyde":
            chunks, hyp = self.retrieve_hyde(req)
            return chunks, [], hyp
        variants = self.query_variants(req, n_variants)
        return self.retrieve_optimized(req, variants=variants), variants, ""

    def synthesize_answer(self, req: RetrievalRequest, chunks: Sequence[ScoredChunk], variants=(), hypothetical_doc: str = "") -> GroundedAnswer:
        if not chunks:
            raise PreconditionError("cannot synthesize an answer without context chunks")
        context = "\n\n".join(
            f"[{i}] Publisher: {s.chunk.meta.publisher or 'unknown'} | Date: {s.chunk.meta.publication_date.isoformat()}\n{s.chunk.text}"
            for i, s in enumerate(chunks, 1)
        )
        system, user = self.prompts.render("synthesize", query=req.query_text, as_of=req.as_of_date.isoformat(), context=context)
        text = self.gateway.chat(user, system=system, tag="synthesize")
        return GroundedAnswer(text, list(chunks), req.method, list(variants), hypothetical_doc)

    def answer(self, req: RetrievalRequest, n_variants: int = DEFAULT_VARIANTS) -> GroundedAnswer:
        chunks, variants, hyp = self.retrieve(req, n_variants)
        if not chunks:
            raise EmptyCorpus(f"no documents in the window ending {req.as_of_date}")
        return self.synthesize_answer(req, chunks, variants, hyp)

    def macro_consensus(self, as_of_date: dt.date, top_n: int = 5, lookback_days: int = DEFAULT_LOOKBACK_DAYS) -> AgentReport:
        """Four predefined HyDE queries, one answer each, then a four-section consolidation."""
        if len(self.index) == 0:
            raise EmptyCorpus("the macro index is empty")
        probe = RetrievalRequest(MACRO_QUERIES[0], as_of_date, "hyde", top_n, lookback_days)
        if self.index.count(probe.chunk_query(np.ones(self.index.dimension))) == 0:
            raise EmptyCorpus(f"no macro documents between {probe.window[0]} and {as_of_date}")
        answers, used = [], set()
        for q in MACRO_QUERIES:
            req = RetrievalRequest(q, as_of_date, "hyde", top_n, lookback_days)
            chunks, hyp = self.retrieve_hyde(req)
            ans = self.synthesize_answer(req, chunks, hypothetical_doc=hyp)
            answers.append(ans)
            used.update(s.chunk.chunk_id for s in chunks)
        listing = "\n\n".join(f"Query: {q}\nAnswer: {a.answer_text}" for q, a in zip(MACRO_QUERIES, answers))
        system, user = self.prompts.render("macro_consolidate", as_of=as_of_date.isoformat(), answers=listing)
        text = self.gateway.chat(user, system=system, tag="macro-consolidate")
        missing = [s for s in MACRO_SECTIONS if s.lower() not in text.lower()]
        if missing:
            raise MissingSections(f"macro report lacks sections {missing}")
        provenance = [f"chunk:{c}" for c in sorted(used)]
        provenance += [f"template:{n}@{self.prompts.get(n).version}" for n in ("hyde", "synthesize", "macro_consolidate")]
        return AgentReport("macro", "MARKET", as_of_date, text, tuple(provenance))
