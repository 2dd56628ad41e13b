"""
The per-stock agents: news, fundamentals, price dynamics and the final signal.

Each agent makes a small, fixed number of LLM calls through the gateway and
returns an :class:`AgentReport` whose ``input_fingerprints`` list the inputs
(content hashes, document ids, template versions) it was built from. The
macro agent lives in :mod:`marketsense.retrieval`.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import math
import re
from dataclasses import dataclass, fields
from decimal import ROUND_HALF_UP, Decimal
from typing import Mapping, Sequence

from . import analytics
from .analytics import PriceSeries
from .errors import InsufficientHistory, InsufficientQuarters, NonFiniteInput, PreconditionError, UnparseableSignal
from .prompts import DEFAULT_LIBRARY, PromptLibrary
from .reports import AgentReport
from .signals import TradeSignal

MAX_QUARTERS = 5
MIN_DYNAMICS_DAYS = 60
_SIGNAL_LINE = re.compile(r"^\s*\**\s*SIGNAL\s*:\s*\**\s*([A-Za-z]+)\s*\**\s*$", re.IGNORECASE)


def text_fingerprint(text: str) -> str:
    return "sha256:" + hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _template_fp(prompts: PromptLibrary, name: str) -> str:
    return f"template:{name}@{prompts.get(name).version}"


# ---------------------------------------------------------------------------
# news


def news_progressive_summary(
    ticker: str,
    day: dt.date,
    day_articles: Sequence[str],
    previous_summary: str,
    gateway,
    prompts: PromptLibrary = DEFAULT_LIBRARY,
    previous_fingerprints: Sequence[str] = (),
) -> AgentReport:
    """Advance the running news narrative by one day.

    No articles: the previous summary is carried over without a call. With
    articles: one call condenses them, and a second merges the result into the
    previous summary unless that is empty.
    """
    fps = list(previous_fingerprints)
    if not day_articles:
        if not previous_summary.strip():
            raise PreconditionError(f"no news for {ticker} and no previous summary to carry")
        return AgentReport("news", ticker, day, previous_summary, tuple(fps))
    articles = "\n\n".join(f"Article {i}:\n{a.strip()}" for i, a in enumerate(day_articles, 1))
    system, user = prompts.render("news_condense", ticker=ticker, date=day.isoformat(), articles=articles)
    today = gateway.chat(user, system=system, tag="news-condense")
    fps += [text_fingerprint(a) for a in day_articles]
    if not previous_summary.strip():
        fps.append(_template_fp(prompts, "news_condense"))
        return AgentReport("news", ticker, day, today, tuple(dict.fromkeys(fps)))
    system, user = prompts.render("news_merge", ticker=ticker, date=day.isoformat(), previous=previous_summary, today=today)
    merged = gateway.chat(user, system=system, tag="news-merge")
    fps += [_template_fp(prompts, "news_condense"), _template_fp(prompts, "news_merge")]
    return AgentReport("news", ticker, day, merged, tuple(dict.fromkeys(fps)))


# ---------------------------------------------------------------------------
# fundamentals


def abbreviate_figure(x: float) -> str:
    """Compact money formatting: 1234567890 -> "1.23B", -4.5e6 -> "-4.50M"."""
    x = float(x)
    if not math.isfinite(x):
        raise NonFiniteInput(f"cannot abbreviate {x}")
    d = Decimal(repr(x))
    mag = abs(d)
    for scale, suffix in ((Decimal("1e9"), "B"), (Decimal("1e6"), "M"), (Decimal("1e3"), "K"), (Decimal(1), "")):
        if mag >= scale or scale == 1:
            q = (mag / scale).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)
            break
    sign = "-" if d < 0 and q != 0 else ""
    return f"{sign}{q}{suffix}"


@dataclass(frozen=True)
class FundamentalsQuarter:
    period_end: dt.date
    revenue: float
    net_income: float
    eps: float
    operating_cash_flow: float
    total_debt: float
    total_equity: float
    cash: float
    filed_date: dt.date | None = None

    @property
    def available_on(self) -> dt.date:
        """First date the figures are public; period end when the filing date is unknown."""
        return self.filed_date or self.period_end

    @classmethod
    def from_dict(cls, d: Mapping) -> "FundamentalsQuarter":
        kw = {}
        for f in fields(cls):
            v = d.get(f.name)
            if f.name in ("period_end", "filed_date"):
                kw[f.name] = dt.date.fromisoformat(v) if v else None
            else:
                kw[f.name] = float(v)
        return cls(**kw)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["period_end"] = self.period_end.isoformat()
        d["filed_date"] = self.filed_date.isoformat() if self.filed_date else None
        return d


METRICS = ("revenue", "net_income", "eps", "operating_cash_flow", "total_debt", "total_equity", "cash")


def pct_change(prev: float, cur: float) -> str:
    if abs(prev) < 1e-9:
        return "n/m"
    q = Decimal(repr((cur - prev) / abs(prev) * 100.0)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)
    return f"{'+' if q >= 0 else ''}{q}%"


def quarterly_delta_table(quarters: Sequence[FundamentalsQuarter]) -> str:
    """Levels and quarter-over-quarter changes for the latest five quarters."""
    if len(quarters) < 2:
        raise InsufficientQuarters(f"need at least 2 quarters, got {len(quarters)}")
    qs = sorted(quarters, key=lambda q: q.period_end)
    for a, b in zip(qs, qs[1:]):
        if a.period_end == b.period_end:
            raise PreconditionError(f"duplicate quarter {a.period_end}")
    qs = qs[-MAX_QUARTERS:]
    header = ["Metric"] + [q.period_end.isoformat() for q in qs]
    rows = [header]
    for m in METRICS:
        vals = [getattr(q, m) for q in qs]
        rows.append([m] + [abbreviate_figure(v) for v in vals])
        rows.append([f"{m} QoQ", "--"] + [pct_change(a, b) for a, b in zip(vals, vals[1:])])
    return "\n".join(" | ".join(r) for r in rows)


def _summarize_doc(template: str, kind: str, ticker: str, doc, gateway, prompts: PromptLibrary, **extra) -> AgentReport:
    if doc.source_kind != kind:
        raise PreconditionError(f"expected a {kind} document, got {doc.source_kind}")
    if not doc.cleaned_text.strip():
        raise PreconditionError(f"document {doc.doc_id} has not been cleaned")
    system, user = prompts.render(template, ticker=ticker, date=doc.publication_date.isoformat(), text=doc.cleaned_text, **extra)
    text = gateway.chat(user, system=system, tag=template.replace("_", "-"))
    fps = (f"doc:{doc.doc_id}", text_fingerprint(doc.cleaned_text), _template_fp(prompts, template))
    return AgentReport("fundamentals", ticker, doc.publication_date, text, fps)


def filing_summary(ticker: str, filing_doc, gateway, prompts: PromptLibrary = DEFAULT_LIBRARY) -> AgentReport:
    """Summary of a 10-K/10-Q focused on disclosures, risk factors and strategy."""
    form = filing_doc.title or "filing"
    return _summarize_doc("filing_summary", "sec_filing", ticker, filing_doc, gateway, prompts, form=form)


def earnings_call_summary(ticker: str, transcript_doc, gateway, prompts: PromptLibrary = DEFAULT_LIBRARY) -> AgentReport:
    """Summary of management tone, confidence, outlook and the Q&A."""
    return _summarize_doc("earnings_call_summary", "earnings_call", ticker, transcript_doc, gateway, prompts)


def fundamentals_consolidation(
    ticker: str,
    as_of: dt.date,
    delta_table: str,
    filing_report: AgentReport | None,
    call_report: AgentReport | None,
    gateway,
    mode: str = "full",
    prompts: PromptLibrary = DEFAULT_LIBRARY,
    table_fingerprints: Sequence[str] = (),
) -> AgentReport:
    """Merge the quarterly table with the filing and call summaries.

    ``mode="basic"`` uses the numbers only. Full mode with a missing summary
    renders it as "not available".
    """
    if not delta_table or not delta_table.strip():
        raise PreconditionError("fundamentals consolidation needs a delta table")
    if mode not in ("full", "basic"):
        raise PreconditionError(f"unknown fundamentals mode {mode!r}")
    fps = list(table_fingerprints) + [text_fingerprint(delta_table)]
    if mode == "basic":
        system, user = prompts.render("fundamentals_basic", ticker=ticker, as_of=as_of.isoformat(), table=delta_table)
        fps.append(_template_fp(prompts, "fundamentals_basic"))
    else:
        filing = filing_report.text if filing_report else "not available"
        call = call_report.text if call_report else "not available"
        for r in (filing_report, call_report):
            if r is not None:
                fps += list(r.input_fingerprints)
        system, user = prompts.render("fundamentals_full", ticker=ticker, as_of=as_of.isoformat(), table=delta_table, filing=filing, call=call)
        fps.append(_template_fp(prompts, "fundamentals_full"))
    text = gateway.chat(user, system=system, tag=f"fundamentals-{mode}")
    return AgentReport("fundamentals", ticker, as_of, text, tuple(dict.fromkeys(fps)))


# ---------------------------------------------------------------------------
# dynamics


def _pct(x: float) -> str:
    return f"{100.0 * x:.2f}%"


def dynamics_table(series: Mapping[str, PriceSeries], order: Sequence[str], rf_daily: float = 0.0) -> str:
    header = ["Series", "Return 1y", "Return 6m", "Return 3m", "Volatility", "Sharpe", "Max Drawdown"]
    rows = [header]
    for name in order:
        s = series[name]
        if len(s) < MIN_DYNAMICS_DAYS:
            raise InsufficientHistory(f"{name} has {len(s)} prices, need {MIN_DYNAMICS_DAYS}")
        snap = analytics.snapshot(s, rf_daily)
        rows.append([
            name,
            _pct(snap["return_1y"]),
            _pct(snap["return_6m"]),
            _pct(snap["return_3m"]),
            _pct(snap["volatility"]),
            "n/a" if snap["sharpe"] is None else f"{snap['sharpe']:.2f}",
            _pct(snap["max_drawdown"]),
        ])
    return "\n".join(" | ".join(r) for r in rows)


def dynamics_report(
    ticker: str,
    as_of: dt.date,
    prices: Mapping[str, PriceSeries],
    peers: Sequence[str],
    market: str,
    gateway,
    rf_daily: float = 0.0,
    prompts: PromptLibrary = DEFAULT_LIBRARY,
) -> AgentReport:
    """Risk/return comparison of ``ticker`` against its peers and the market.

    ``prices`` must already be truncated at ``as_of``.
    """
    order = [ticker] + [p for p in peers if p != ticker] + [market]
    for name in order:
        if name not in prices:
            raise InsufficientHistory(f"no prices for {name}")
    table = dynamics_table(prices, order, rf_daily)
    system, user = prompts.render("dynamics", ticker=ticker, as_of=as_of.isoformat(), market=market, table=table)
    text = gateway.chat(user, system=system, tag="dynamics")
    fps = [f"prices:{n}@{prices[n].dates[-1].isoformat()}" for n in order]
    fps += [text_fingerprint(table), _template_fp(prompts, "dynamics")]
    return AgentReport("dynamics", ticker, as_of, text, tuple(fps))


# ---------------------------------------------------------------------------
# signal

SIGNAL_INPUTS = ("news", "fundamentals", "dynamics", "macro")


def parse_signal(text: str) -> str:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise UnparseableSignal("empty signal response")
    m = _SIGNAL_LINE.match(lines[-1])
    if not m or m.group(1).lower() not in ("buy", "hold", "sell"):
        raise UnparseableSignal(f"final line is not a signal: {lines[-1]!r}")
    return m.group(1).lower()


def signal_decision(
    ticker: str,
    as_of: dt.date,
    reports: Mapping[str, AgentReport],
    gateway,
    prompts: PromptLibrary = DEFAULT_LIBRARY,
) -> tuple[TradeSignal, AgentReport]:
    """Chain-of-thought decision over the four upstream reports."""
    for k in SIGNAL_INPUTS:
        r = reports.get(k)
        if r is None or not r.text.strip():
            raise PreconditionError(f"signal for {ticker} needs a {k} report")
    system, user = prompts.render(
        "signal", ticker=ticker, as_of=as_of.isoformat(), **{k: reports[k].text for k in SIGNAL_INPUTS}
    )
    text = gateway.chat(user, system=system, tag="signal")
    action = parse_signal(text)
    fps = [f"report:{reports[k].filename()}" for k in SIGNAL_INPUTS] + [_template_fp(prompts, "signal")]
    report = AgentReport("signal", ticker, as_of, text, tuple(fps))
    return TradeSignal(ticker, as_of, action, text), report
