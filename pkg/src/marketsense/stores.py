"""Dated per-ticker inputs: company news articles and quarterly fundamentals."""

from __future__ import annotations

import datetime as dt
import json
from collections import defaultdict
from pathlib import Path

from . import audit
from .agents import FundamentalsQuarter
from .errors import PreconditionError


class NewsStore:
    """Company news articles, one JSON object per line: ``{"date", "ticker", "text"}``."""

    def __init__(self, articles=()):
        self._by_key: dict[tuple[str, dt.date], list[str]] = defaultdict(list)
        for a in articles:
            self.add(a["ticker"], a["date"], a["text"])

    def add(self, ticker: str, day, text: str) -> None:
        if isinstance(day, str):
            day = dt.date.fromisoformat(day)
        if not text.strip():
            raise PreconditionError("empty news article")
        self._by_key[(ticker.upper(), day)].append(text)

    @classmethod
    def load(cls, path: str | Path | None) -> "NewsStore":
        if path is None or not Path(path).exists():
            return cls()
        rows = [json.loads(ln) for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
        return cls(rows)

    def articles(self, ticker: str, day: dt.date) -> list[str]:
        arts = list(self._by_key.get((ticker.upper(), day), ()))
        if arts:
            audit.note("news", f"{ticker}@{day.isoformat()}", day)
        return arts


class FundamentalsStore:
    """Quarterly statements per ticker from ``{"TICK": [quarter, ...]}`` JSON."""

    def __init__(self, quarters: dict[str, list[FundamentalsQuarter]] | None = None):
        self.quarters = {k.upper(): sorted(v, key=lambda q: q.period_end) for k, v in (quarters or {}).items()}

    @classmethod
    def load(cls, path: str | Path | None) -> "FundamentalsStore":
        if path is None or not Path(path).exists():
            return cls()
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls({t: [FundamentalsQuarter.from_dict(q) for q in qs] for t, qs in raw.items()})

    def available(self, ticker: str, as_of: dt.date) -> list[FundamentalsQuarter]:
        """Quarters whose figures were public on ``as_of``."""
        out = [q for q in self.quarters.get(ticker.upper(), []) if q.available_on <= as_of]
        for q in out:
            audit.note("fundamentals", f"{ticker}@{q.period_end.isoformat()}", q.available_on)
        return out
