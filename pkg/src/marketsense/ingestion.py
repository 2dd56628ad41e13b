"""
Document ingestion: parsing, metadata extraction, relevance filtering,
cleaning/summarization and the append-only document registry.

Input corpora are plain text (pre-extracted from PDF/HTML), laid out as one
directory per source kind. A sidecar ``<file>.meta.json`` may supply
``publisher``, ``publication_date`` (YYYY-MM-DD), ``url`` and ``ticker`` when
the document body lacks them.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import math
import os
import re
import threading
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

from . import audit
from .errors import (
    DuplicateConflict,
    EmptyCleanOutput,
    MissingDate,
    PreconditionError,
    RegistryIOError,
    UnparsableFormat,
    UnparseableVerdict,
    UnreadableFile,
)
from .prompts import DEFAULT_LIBRARY, PromptLibrary

SOURCE_KINDS = ("sec_filing", "earnings_call", "macro_report")
RELEVANCE = ("unknown", "relevant", "irrelevant")
CHARS_PER_PAGE = 3000
CHARS_PER_TOKEN = 4
LARGE_DOC_PAGES = 30
DEFAULT_TOKEN_BUDGET = 8000
CLASSIFY_MAX_CHARS = 12_000


@dataclass
class Document:
    doc_id: str
    source_kind: str
    publisher: str
    publication_date: dt.date
    raw_text: str
    url: str = ""
    page_count: int = 1
    cleaned_text: str = ""
    summary: str = ""
    relevance: str = "unknown"
    ticker: str = ""
    title: str = ""

    def __post_init__(self):
        if self.source_kind not in SOURCE_KINDS:
            raise PreconditionError(f"unknown source kind {self.source_kind!r}")
        if self.relevance not in RELEVANCE:
            raise PreconditionError(f"unknown relevance {self.relevance!r}")

    @property
    def content_hash(self) -> str:
        return hashlib.sha256(self.raw_text.encode("utf-8")).hexdigest()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["publication_date"] = self.publication_date.isoformat()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Document":
        d = dict(d)
        d["publication_date"] = dt.date.fromisoformat(d["publication_date"])
        return cls(**d)


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text) / CHARS_PER_TOKEN)


def estimate_pages(text: str) -> int:
    return max(1, math.ceil(len(text) / CHARS_PER_PAGE))


# ---------------------------------------------------------------------------
# parsing

_MONTHS = "January|February|March|April|May|June|July|August|September|October|November|December"
_LONG_DATE = re.compile(rf"\b({_MONTHS})\s+(\d{{1,2}}),\s+(\d{{4}})\b")
_ISO_DATE = re.compile(r"\b(\d{4})-(\d{2})-(\d{2})\b")
_HEADER_LINE = re.compile(r"^\s*([A-Za-z][A-Za-z _-]{1,30}):\s*(.+?)\s*$")
_HEADER_KEYS = {
    "date": "publication_date",
    "publication date": "publication_date",
    "published": "publication_date",
    "release date": "publication_date",
    "publisher": "publisher",
    "source": "publisher",
    "url": "url",
    "pages": "page_count",
    "ticker": "ticker",
    "title": "title",
}


def _parse_date(value: str) -> dt.date | None:
    value = value.strip()
    m = _ISO_DATE.search(value)
    if m:
        try:
            return dt.date(int(m[1]), int(m[2]), int(m[3]))
        except ValueError:
            return None
    m = _LONG_DATE.search(value)
    if m:
        return dt.datetime.strptime(f"{m[1]} {m[2]} {m[3]}", "%B %d %Y").date()
    if re.fullmatch(r"\d{8}", value):
        try:
            return dt.datetime.strptime(value, "%Y%m%d").date()
        except ValueError:
            return None
    return None


def parse_generic(text: str) -> tuple[str, dict]:
    """Read an optional ``Key: value`` header block, then the body.

    The header ends at the first blank line. When no date header is present,
    the first date found in the opening 1,000 characters is used.
    """
    lines = text.splitlines(keepends=True)
    meta: dict = {}
    body_start = 0
    for i, line in enumerate(lines):
        if not line.strip():
            if meta:
                body_start = i + 1
            break
        m = _HEADER_LINE.match(line)
        if not m or m[1].strip().lower() not in _HEADER_KEYS:
            meta = {}
            break
        meta[_HEADER_KEYS[m[1].strip().lower()]] = m[2]
    body = "".join(lines[body_start:]) if meta else text
    if "publication_date" in meta:
        meta["publication_date"] = _parse_date(meta["publication_date"])
    else:
        meta["publication_date"] = _parse_date(text[:1000])
    if "page_count" in meta:
        try:
            meta["page_count"] = int(meta["page_count"])
        except ValueError:
            del meta["page_count"]
    return body, {k: v for k, v in meta.items() if v not in (None, "")}


def parse_edgar(text: str) -> tuple[str, dict]:
    """EDGAR full-submission text: metadata from the ``<SEC-HEADER>`` block."""
    meta: dict = {}
    m = re.search(r"FILED AS OF DATE:\s*(\d{8})", text)
    if m:
        meta["publication_date"] = _parse_date(m[1])
    m = re.search(r"COMPANY CONFORMED NAME:\s*(.+)", text)
    if m:
        meta["publisher"] = m[1].strip()
    m = re.search(r"CONFORMED SUBMISSION TYPE:\s*(\S+)", text)
    if m:
        meta["title"] = m[1].strip()
    m = re.search(r"TRADING SYMBOL:\s*(\S+)", text)
    if m:
        meta["ticker"] = m[1].strip().upper()
    end = text.find("</SEC-HEADER>")
    body = text[end + len("</SEC-HEADER>"):] if end >= 0 else text
    if "publication_date" not in meta:
        _, fallback = parse_generic(text)
        meta = {**fallback, **meta}
    return body.lstrip("\n"), {k: v for k, v in meta.items() if v not in (None, "")}


def parse_transcript(text: str) -> tuple[str, dict]:
    """Earnings-call transcript: ``Company (TICK) Q4 2023 Earnings Call`` title line plus a dated line."""
    meta: dict = {}
    head = text[:2000]
    m = re.search(r"^(.*?)\(([A-Z.\-]{1,6})\)\s*(Q[1-4]\s+\d{4}\s+Earnings Call.*)$", head, re.M)
    if m:
        meta["publisher"] = m[1].strip()
        meta["ticker"] = m[2]
        meta["title"] = m[3].strip()
    d = _parse_date(head)
    if d:
        meta["publication_date"] = d
    if not m:
        body, generic = parse_generic(text)
        return body, {**generic, **meta}
    return text, meta


def parse_central_bank(text: str) -> tuple[str, dict]:
    """Central-bank press release: ``For release at ...`` followed by a long-form date."""
    meta: dict = {}
    m = re.search(r"For (?:immediate )?release[^\n]*\n?\s*([A-Z][a-z]+ \d{1,2}, \d{4})", text[:1500], re.I)
    if m:
        meta["publication_date"] = _parse_date(m[1])
    pub = re.search(r"(Federal Reserve|European Central Bank|Bank of England|Bank of Japan)", text[:1500])
    if pub:
        meta["publisher"] = pub[1]
    body, generic = parse_generic(text)
    return body, {**generic, **{k: v for k, v in meta.items() if v}}


Parser = Callable[[str], "tuple[str, dict]"]
PARSERS: dict[tuple[str, str], Parser] = {
    ("sec_filing", "edgar"): parse_edgar,
    ("earnings_call", "transcript"): parse_transcript,
    ("macro_report", "central_bank"): parse_central_bank,
}


def register_parser(source_kind: str, hint: str, fn: Parser) -> None:
    PARSERS[(source_kind, hint)] = fn


def _doc_id(source_kind: str, path: Path) -> str:
    stem = path.name
    for suffix in (".txt", ".md", ".text"):
        if stem.endswith(suffix):
            stem = stem[: -len(suffix)]
    slug = re.sub(r"[^A-Za-z0-9._-]+", "-", stem).strip("-")
    return f"{source_kind}--{slug}"


def parse_document(path: str | os.PathLike, source_kind: str, parser_hint: str | None = None) -> Document:
    if source_kind not in SOURCE_KINDS:
        raise PreconditionError(f"unknown source kind {source_kind!r}")
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc
    if b"\x00" in raw[:4096]:
        raise UnparsableFormat(f"{path}: binary content (inputs must be pre-extracted text)")
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise UnparsableFormat(f"{path}: not UTF-8 text") from exc
    if not text.strip():
        raise UnparsableFormat(f"{path}: empty document")

    parser = PARSERS.get((source_kind, parser_hint or ""), parse_generic)
    body, meta = parser(text)
    if not body.strip():
        raise UnparsableFormat(f"{path}: no body text after parsing")

    sidecar = Path(str(path) + ".meta.json")
    if sidecar.exists():
        try:
            side = json.loads(sidecar.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UnparsableFormat(f"{sidecar}: {exc}") from exc
        if "publication_date" in side:
            side["publication_date"] = _parse_date(str(side["publication_date"]))
        for key, value in side.items():
            if value not in (None, "") and key not in meta:
                meta[key] = value

    if not meta.get("publication_date"):
        raise MissingDate(f"{path}: publication date could not be established")
    page_count = meta.get("page_count")
    if not page_count:
        page_count = text.count("\f") + 1 if "\f" in text else estimate_pages(body)
    return Document(
        doc_id=str(meta.get("doc_id") or _doc_id(source_kind, path)),
        source_kind=source_kind,
        publisher=str(meta.get("publisher", "")),
        publication_date=meta["publication_date"],
        url=str(meta.get("url", "")),
        raw_text=body,
        page_count=int(page_count),
        ticker=str(meta.get("ticker", "")).upper(),
        title=str(meta.get("title", "")),
    )


# ---------------------------------------------------------------------------
# LLM stages


def classify_relevance(doc: Document, gateway, prompts: PromptLibrary = DEFAULT_LIBRARY) -> str:
    if not doc.raw_text.strip():
        raise PreconditionError("document has no text")
    system, user = prompts.render(
        "relevance", publisher=doc.publisher or "unknown", date=doc.publication_date.isoformat(), text=doc.raw_text[:CLASSIFY_MAX_CHARS]
    )
    reply = gateway.chat(user, system=system, tag="relevance", max_output_tokens=4)
    verdict = re.sub(r"[^A-Z]", "", reply.strip().upper())
    if verdict == "RELEVANT":
        return "relevant"
    if verdict == "IRRELEVANT":
        return "irrelevant"
    raise UnparseableVerdict(f"relevance verdict {reply!r} for {doc.doc_id}")


def segment_text(text: str, budget_tokens: int) -> list[str]:
    """Split ``text`` into ``ceil(tokens / budget)`` ordered, contiguous segments.

    Each segment holds at most ``budget_tokens * 4`` characters. Boundaries
    are moved to the nearest whitespace when that keeps every segment within
    the limit; otherwise the split is exact. Joining the segments gives back
    ``text`` unchanged.
    """
    if budget_tokens < 1:
        raise PreconditionError("token budget must be positive")
    limit = budget_tokens * CHARS_PER_TOKEN
    L = len(text)
    n = max(1, math.ceil(estimate_tokens(text) / budget_tokens))
    if n == 1:
        return [text]
    cuts = [0]
    window = max(1, limit // 10)
    for k in range(1, n):
        prev = cuts[-1]
        lo = max(prev + 1, L - (n - k) * limit)
        hi = min(prev + limit, L - 1)
        ideal = min(max(round(k * L / n), lo), hi)
        best = ideal
        for off in range(window + 1):
            cand = [c for c in (ideal - off, ideal + off) if lo <= c <= hi]
            hit = next((c for c in cand if text[c - 1].isspace() and not text[c].isspace()), None)
            if hit is not None:
                best = hit
                break
        cuts.append(best)
    cuts.append(L)
    return [text[a:b] for a, b in zip(cuts, cuts[1:])]


_CLEANED = re.compile(r"^\s*CLEANED:\s*\n?", re.M)
_SUMMARY = re.compile(r"^\s*SUMMARY:\s*\n?", re.M)


def _split_clean_reply(reply: str, what: str) -> tuple[str, str]:
    c = _CLEANED.search(reply)
    s = None
    for s in _SUMMARY.finditer(reply):
        pass
    if c is None or s is None or s.start() < c.end():
        raise EmptyCleanOutput(f"{what}: reply does not follow the CLEANED/SUMMARY layout")
    cleaned = reply[c.end():s.start()].strip()
    summary = reply[s.end():].strip()
    if not cleaned or not summary:
        raise EmptyCleanOutput(f"{what}: empty cleaned text or summary")
    return cleaned, summary


def needs_segmentation(doc: Document, budget_tokens: int) -> bool:
    return doc.page_count > LARGE_DOC_PAGES or estimate_tokens(doc.raw_text) > budget_tokens


def clean_and_summarize(
    doc: Document,
    gateway,
    chunk_token_budget: int = DEFAULT_TOKEN_BUDGET,
    prompts: PromptLibrary = DEFAULT_LIBRARY,
) -> Document:
    """Return a copy of ``doc`` with ``cleaned_text`` and ``summary`` filled in.

    Small documents take one LLM pass. Large ones (over 30 pages, or more
    tokens than the budget) are segmented; each segment is cleaned and
    summarized, then one more call consolidates the segment summaries.
    """
    if doc.relevance != "relevant":
        raise PreconditionError(f"{doc.doc_id} is not marked relevant")
    date = doc.publication_date.isoformat()
    publisher = doc.publisher or "unknown"
    if not needs_segmentation(doc, chunk_token_budget):
        system, user = prompts.render("clean_summarize", publisher=publisher, date=date, text=doc.raw_text)
        cleaned, summary = _split_clean_reply(gateway.chat(user, system=system, tag="clean-summarize"), doc.doc_id)
        return replace(doc, cleaned_text=cleaned, summary=summary)

    segments = segment_text(doc.raw_text, chunk_token_budget)
    cleaned_parts, summaries = [], []
    for i, seg in enumerate(segments, 1):
        system, user = prompts.render("clean_segment", index=i, total=len(segments), publisher=publisher, date=date, text=seg)
        c, s = _split_clean_reply(gateway.chat(user, system=system, tag="clean-segment"), f"{doc.doc_id} segment {i}")
        cleaned_parts.append(c)
        summaries.append(s)
    listing = "\n\n".join(f"Segment {i}:\n{s}" for i, s in enumerate(summaries, 1))
    system, user = prompts.render("consolidate_summaries", total=len(segments), publisher=publisher, date=date, summaries=listing)
    merged = gateway.chat(user, system=system, tag="consolidate-summaries").strip()
    if not merged:
        raise EmptyCleanOutput(f"{doc.doc_id}: empty consolidated summary")
    return replace(doc, cleaned_text="\n\n".join(cleaned_parts), summary=merged)


# ---------------------------------------------------------------------------
# registry


@dataclass(frozen=True)
class RegistryEntry:
    doc_id: str
    publisher: str
    publication_date: str
    url: str
    source_kind: str
    content_path: str
    ingest_timestamp: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=False, ensure_ascii=False)


def default_timestamp() -> str:
    """UTC ingest time; honours ``SOURCE_DATE_EPOCH`` for reproducible runs."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = dt.datetime.fromtimestamp(int(epoch), dt.timezone.utc) if epoch else dt.datetime.now(dt.timezone.utc)
    return when.replace(microsecond=0).isoformat()


class Registry:
    """Append-only JSON-lines lookup table of ingested documents.

    Document contents are stored as JSON under ``content/`` next to the
    registry file; ``content_path`` is relative to the registry directory.
    """

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self.root = self.path.parent
        self._lock = threading.Lock()
        self.entries: dict[str, RegistryEntry] = {}
        self.order: list[str] = []
        if self.path.exists():
            try:
                with open(self.path, encoding="utf-8") as fh:
                    for line in fh:
                        if line.strip():
                            e = RegistryEntry(**json.loads(line))
                            if e.doc_id in self.entries:
                                raise RegistryIOError(f"registry lists {e.doc_id} twice")
                            self.entries[e.doc_id] = e
                            self.order.append(e.doc_id)
            except (OSError, json.JSONDecodeError, TypeError) as exc:
                raise RegistryIOError(f"cannot read registry {self.path}: {exc}") from exc

    def __len__(self) -> int:
        return len(self.order)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self.entries

    def __iter__(self):
        return (self.entries[d] for d in self.order)

    def register(self, doc: Document, timestamp: str | None = None) -> RegistryEntry:
        if doc.relevance == "unknown":
            raise PreconditionError(f"{doc.doc_id} has not been classified")
        with self._lock:
            existing = self.entries.get(doc.doc_id)
            if existing is not None:
                stored = self._read_content(existing)
                if stored.get("content_hash") != doc.content_hash:
                    raise DuplicateConflict(f"{doc.doc_id} already registered with different content")
                return existing
            rel = f"content/{doc.doc_id}.json"
            payload = {"content_hash": doc.content_hash, "document": doc.to_dict()}
            entry = RegistryEntry(
                doc_id=doc.doc_id,
                publisher=doc.publisher,
                publication_date=doc.publication_date.isoformat(),
                url=doc.url,
                source_kind=doc.source_kind,
                content_path=rel,
                ingest_timestamp=timestamp or default_timestamp(),
            )
            try:
                target = self.root / rel
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_text(json.dumps(payload, indent=1, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(entry.to_json() + "\n")
            except OSError as exc:
                raise RegistryIOError(f"cannot write registry: {exc}") from exc
            self.entries[doc.doc_id] = entry
            self.order.append(doc.doc_id)
            return entry

    def _read_content(self, entry: RegistryEntry) -> dict:
        try:
            return json.loads((self.root / entry.content_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise RegistryIOError(f"cannot read content of {entry.doc_id}: {exc}") from exc

    def load(self, doc_id: str) -> Document:
        doc = Document.from_dict(self._read_content(self.entries[doc_id])["document"])
        audit.note("document", doc_id, doc.publication_date)
        return doc

    def latest(self, source_kind: str, ticker: str, as_of: dt.date) -> Document | None:
        """Most recent document of a kind for a ticker published on or before ``as_of``."""
        best = None
        for e in self:
            if e.source_kind != source_kind or dt.date.fromisoformat(e.publication_date) > as_of:
                continue
            doc = Document.from_dict(self._read_content(e)["document"])
            if doc.ticker != ticker.upper():
                continue
            if best is None or (doc.publication_date, doc.doc_id) > (best.publication_date, best.doc_id):
                best = doc
        if best is not None:
            audit.note("document", best.doc_id, best.publication_date)
        return best


def register(doc: Document, registry_path: str | os.PathLike, timestamp: str | None = None) -> RegistryEntry:
    """Functional form of :meth:`Registry.register`."""
    return Registry(registry_path).register(doc, timestamp)
