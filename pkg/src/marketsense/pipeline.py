"""
End-to-end orchestration: ingest a corpus, analyze tickers, emit signal sets,
backtest them and fit factor models. Every output lands under one run
directory so that a replayed run can be compared file by file.

Run directory layout::

    registry/registry.jsonl, registry/content/   document registry
    index/                                        macro chunk index
    reports/<agent>_<ticker>_<date>.json          agent reports
    signals.csv                                   all signal sets
    backtest/                                     reports, equity curves, tables
    factor/                                       factor tables
"""

from __future__ import annotations

import datetime as dt
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from . import agents, audit
from .analytics import PriceBook, load_prices_csv
from .backtest import (
    PortfolioConfig,
    attribution,
    format_attribution_table,
    format_performance_table,
    run_backtest,
)
from .config import RunConfig
from .errors import DuplicateConflict, MarketSenseError, PreconditionError
from .factors import format_factor_table, load_factor_csv, run_factor_models
from .gateway import Cassette, Gateway, MockEmbedder
from .index import chunk_document, load_or_create
from .ingestion import SOURCE_KINDS, Registry, classify_relevance, clean_and_summarize, default_timestamp, parse_document
from .prompts import PromptLibrary
from .reports import AgentReport
from .retrieval import Retriever
from .signals import SignalSet, TradeSignal, read_signals_csv, write_signals_csv
from .stores import FundamentalsStore, NewsStore

logger = logging.getLogger(__name__)

PARSER_HINTS = {"sec_filing": "edgar", "earnings_call": "transcript", "macro_report": "central_bank"}
# only macro documents go through the relevance filter and into the index
INDEXED_KINDS = ("macro_report",)


def build_gateway(cfg: RunConfig, transport=None) -> Gateway:
    cassette = None
    if cfg.mode in ("record", "replay"):
        p = cfg.require("cassette")
        cassette = Cassette.load(p) if p.exists() else Cassette(path=p)
    embedder = MockEmbedder(cfg.embed_dim, cfg.embed_seed) if cfg.embedder == "mock" else None
    if cfg.mode == "replay":
        return Gateway("replay", cassette, embedder=embedder)
    return Gateway.from_env(cfg.mode, cassette, embedder, transport=transport)


def schedule(cfg: RunConfig, prices: PriceBook) -> list[dt.date]:
    """Rebalance dates: the explicit list, or the first trading day of each month in [start, end]."""
    if cfg.rebalance_dates:
        return list(cfg.rebalance_dates)
    if cfg.schedule_start is None or cfg.schedule_end is None:
        raise PreconditionError("config needs schedule.rebalance_dates or schedule.start/end")
    out, seen = [], set()
    for d in prices.calendar(cfg.benchmark):
        if cfg.schedule_start <= d <= cfg.schedule_end and (d.year, d.month) not in seen:
            seen.add((d.year, d.month))
            out.append(d)
    return out


@dataclass
class ItemStatus:
    item: str
    status: str
    detail: str = ""

    @property
    def failed(self) -> bool:
        return self.status == "error"


@dataclass
class IngestSummary:
    items: list[ItemStatus] = field(default_factory=list)

    @property
    def indexed(self) -> int:
        return sum(1 for s in self.items if s.status == "indexed")

    @property
    def new(self) -> int:
        return sum(1 for s in self.items if s.status in ("indexed", "registered", "irrelevant"))

    def to_dict(self) -> dict:
        return {
            "new": self.new,
            "indexed": self.indexed,
            "items": [{"item": s.item, "status": s.status, "detail": s.detail} for s in self.items],
        }


class Workspace:
    """Binds a config, a run directory and a gateway."""

    def __init__(self, cfg: RunConfig, run_dir: str | Path, gateway: Gateway | None = None):
        self.cfg = cfg
        self.run_dir = Path(run_dir)
        self.gateway = gateway or build_gateway(cfg)
        self.prompts = PromptLibrary(cfg.path("templates"))
        self._prices: PriceBook | None = None
        self._index = None
        self._registry: Registry | None = None
        self._news: NewsStore | None = None
        self._fund: FundamentalsStore | None = None

    # -- lazily opened stores -------------------------------------------

    @property
    def reports_dir(self) -> Path:
        return self.run_dir / "reports"

    @property
    def registry(self) -> Registry:
        if self._registry is None:
            p = self.cfg.path("registry") or self.run_dir / "registry" / "registry.jsonl"
            p.parent.mkdir(parents=True, exist_ok=True)
            self._registry = Registry(p)
        return self._registry

    @property
    def index_dir(self) -> Path:
        return self.cfg.path("index") or self.run_dir / "index"

    @property
    def index(self):
        if self._index is None:
            self._index = load_or_create(self.index_dir, self.cfg.embed_dim)
        return self._index

    @property
    def prices(self) -> PriceBook:
        if self._prices is None:
            self._prices = PriceBook(load_prices_csv(self.cfg.require("prices")))
        return self._prices

    @property
    def news(self) -> NewsStore:
        if self._news is None:
            self._news = NewsStore.load(self.cfg.path("news"))
        return self._news

    @property
    def fundamentals(self) -> FundamentalsStore:
        if self._fund is None:
            self._fund = FundamentalsStore.load(self.cfg.path("fundamentals"))
        return self._fund

    def save_cassette(self) -> None:
        if self.gateway.mode == "record" and self.gateway.cassette is not None:
            self.gateway.cassette.save()

    # -- ingest -----------------------------------------------------------

    def ingest(self) -> IngestSummary:
        corpus = self.cfg.require("corpus")
        if not corpus.is_dir():
            raise PreconditionError(f"corpus directory {corpus} does not exist")
        summary = IngestSummary()
        stamp = self.cfg.ingest_timestamp or default_timestamp()
        indexed_docs = self.index.doc_ids()
        for kind in SOURCE_KINDS:
            kdir = corpus / kind
            if not kdir.is_dir():
                continue
            for path in sorted(p for p in kdir.iterdir() if p.is_file() and not p.name.endswith(".meta.json")):
                name = f"{kind}/{path.name}"
                try:
                    summary.items.append(ItemStatus(name, *self._ingest_one(path, kind, stamp, indexed_docs)))
                except MarketSenseError as exc:
                    summary.items.append(ItemStatus(name, "error", f"{type(exc).__name__}: {exc}"))
        self.index.persist(self.index_dir)
        return summary

    def _ingest_one(self, path: Path, kind: str, stamp: str, indexed_docs: set[str]) -> tuple[str, str]:
        doc = parse_document(path, kind, PARSER_HINTS.get(kind))
        reg = self.registry
        if doc.doc_id in reg:
            stored = reg.load(doc.doc_id)
            if stored.content_hash != doc.content_hash:
                raise DuplicateConflict(f"{doc.doc_id} changed since it was registered")
            if kind in INDEXED_KINDS and stored.relevance == "relevant" and doc.doc_id not in indexed_docs:
                self.index.upsert_chunks(chunk_document(stored, self.gateway))
                return "indexed", doc.doc_id
            return "unchanged", doc.doc_id
        # company filings and calls are relevant by construction
        verdict = classify_relevance(doc, self.gateway, self.prompts) if kind in INDEXED_KINDS else "relevant"
        doc = replace(doc, relevance=verdict)
        if doc.relevance == "irrelevant":
            reg.register(doc, stamp)
            return "irrelevant", doc.doc_id
        doc = clean_and_summarize(doc, self.gateway, self.cfg.token_budget, self.prompts)
        reg.register(doc, stamp)
        if kind in INDEXED_KINDS:
            self.index.upsert_chunks(chunk_document(doc, self.gateway))
            return "indexed", doc.doc_id
        return "registered", doc.doc_id

    # -- agents -----------------------------------------------------------

    def macro_report(self, as_of: dt.date) -> AgentReport:
        """Computed once per as_of date and cached in the reports directory."""
        p = self.reports_dir / f"macro_MARKET_{as_of.isoformat()}.json"
        if p.exists():
            return AgentReport.load(p)
        with audit.clock(as_of):
            rep = Retriever(self.index, self.gateway, self.prompts).macro_consensus(as_of, self.cfg.top_n, self.cfg.lookback_days)
        rep.save(self.reports_dir)
        return rep

    def news_report(self, ticker: str, as_of: dt.date) -> AgentReport:
        start = as_of - dt.timedelta(days=self.cfg.news_lookback_days - 1)
        current: AgentReport | None = None
        day = start
        while day <= as_of:
            arts = self.news.articles(ticker, day)
            if arts:
                prev = current.text if current else ""
                fps = current.input_fingerprints if current else ()
                current = agents.news_progressive_summary(ticker, day, arts, prev, self.gateway, self.prompts, fps)
            day += dt.timedelta(days=1)
        if current is None:
            text = f"No company news for {ticker} between {start.isoformat()} and {as_of.isoformat()}."
            return AgentReport("news", ticker, as_of, text, ())
        return AgentReport("news", ticker, as_of, current.text, current.input_fingerprints)

    def fundamentals_report(self, ticker: str, as_of: dt.date, mode: str | None = None) -> AgentReport:
        mode = mode or self.cfg.fundamentals_mode
        quarters = self.fundamentals.available(ticker, as_of)
        table = agents.quarterly_delta_table(quarters)
        used = sorted(quarters, key=lambda q: q.period_end)[-agents.MAX_QUARTERS:]
        table_fps = [f"fundamentals:{ticker}@{q.period_end.isoformat()}" for q in used]
        filing_rep = call_rep = None
        if mode == "full":
            filing = self.registry.latest("sec_filing", ticker, as_of)
            if filing is not None:
                filing_rep = agents.filing_summary(ticker, filing, self.gateway, self.prompts)
            call = self.registry.latest("earnings_call", ticker, as_of)
            if call is not None:
                call_rep = agents.earnings_call_summary(ticker, call, self.gateway, self.prompts)
        return agents.fundamentals_consolidation(
            ticker, as_of, table, filing_rep, call_rep, self.gateway, mode, self.prompts, table_fps
        )

    def dynamics_report(self, ticker: str, as_of: dt.date) -> AgentReport:
        peers = self.cfg.peers.get(ticker, [])
        names = [ticker] + [p for p in peers if p != ticker] + [self.cfg.benchmark]
        hist = {}
        for n in names:
            if n not in self.prices:
                raise agents.InsufficientHistory(f"no prices for {n}")
            hist[n] = self.prices.history(n, as_of)
        return agents.dynamics_report(ticker, as_of, hist, peers, self.cfg.benchmark, self.gateway, self.cfg.rf_daily, self.prompts)

    def analyze(self, ticker: str, as_of: dt.date) -> TradeSignal:
        """Run the four agents and the signal agent; persist all five reports."""
        ticker = ticker.upper()
        macro = self.macro_report(as_of)
        with audit.clock(as_of):
            reports = {
                "news": self.news_report(ticker, as_of),
                "fundamentals": self.fundamentals_report(ticker, as_of),
                "dynamics": self.dynamics_report(ticker, as_of),
                "macro": macro,
            }
            sig, sig_report = agents.signal_decision(ticker, as_of, reports, self.gateway, self.prompts)
        for k in ("news", "fundamentals", "dynamics"):
            reports[k].save(self.reports_dir)
        path = sig_report.save(self.reports_dir)
        return TradeSignal(sig.ticker, sig.as_of_date, sig.action, sig.explanation, path.relative_to(self.run_dir).as_posix())

    def signals(self, as_of: dt.date, tickers: Sequence[str] | None = None) -> tuple[SignalSet, list[ItemStatus]]:
        tickers = list(tickers if tickers is not None else self.cfg.tickers)
        if not tickers:
            raise PreconditionError("the universe is empty")
        out, status = {}, []
        for t in tickers:
            try:
                out[t] = self.analyze(t, as_of)
                status.append(ItemStatus(t, "ok", out[t].action))
            except MarketSenseError as exc:
                status.append(ItemStatus(t, "error", f"{type(exc).__name__}: {exc}"))
        return SignalSet(as_of, out), status

    def all_signals(self, dates: Sequence[dt.date] | None = None) -> tuple[list[SignalSet], list[ItemStatus]]:
        dates = list(dates) if dates is not None else schedule(self.cfg, self.prices)
        sets, status = [], []
        for d in dates:
            s, st = self.signals(d)
            sets.append(s)
            status += [ItemStatus(f"{x.item}@{d.isoformat()}", x.status, x.detail) for x in st]
        write_signals_csv(self.run_dir / "signals.csv", sets)
        return sets, status

    # -- backtest / factors ----------------------------------------------

    def load_signal_sets(self) -> list[SignalSet]:
        p = self.cfg.path("signals") or self.run_dir / "signals.csv"
        if not p.exists():
            raise PreconditionError(f"no signals file at {p}; run the signals command first")
        return read_signals_csv(p)

    def portfolio_config(self, weighting: str, cost_bps: float | None = None) -> PortfolioConfig:
        return PortfolioConfig(
            weighting=weighting,
            cost_bps=self.cfg.cost_bps if cost_bps is None else cost_bps,
            initial_capital=self.cfg.initial_capital,
            benchmark=self.cfg.benchmark,
            rf_daily=self.cfg.rf_daily,
        )

    def backtest(self) -> tuple[dict, list[ItemStatus]]:
        """Equal- and cap-weighted portfolios plus a buy-and-hold benchmark row."""
        sets = self.load_signal_sets()
        out_dir = self.run_dir / "backtest"
        out_dir.mkdir(parents=True, exist_ok=True)
        reports, attr, status = {}, {}, []
        audit_run = audit.AccessAudit()
        with audit_run.activate():
            for label, weighting in (("MS-Eq", "equal"), ("MS-Cap", "cap")):
                try:
                    reports[label] = run_backtest(sets, self.prices, self.portfolio_config(weighting))
                    if len(sets) >= 2:
                        attr[label] = attribution(reports[label], sets)
                    status.append(ItemStatus(label, "ok"))
                except MarketSenseError as exc:
                    status.append(ItemStatus(label, "error", f"{type(exc).__name__}: {exc}"))
            bench = self.cfg.benchmark
            first = SignalSet(sets[0].rebalance_date, {bench: TradeSignal(bench, sets[0].rebalance_date, "buy")})
            reports[bench] = run_backtest([first], self.prices, self.portfolio_config("equal", 0.0))
        if audit_run.violations:
            status.append(ItemStatus("audit", "error", f"{len(audit_run.violations)} look-ahead accesses"))
        for label, rep in reports.items():
            (out_dir / f"report_{label}.json").write_text(rep.to_json(), encoding="utf-8")
            rep.write_equity_csv(out_dir / f"equity_{label}.csv")
        (out_dir / "performance.txt").write_text(format_performance_table(reports), encoding="utf-8")
        if attr:
            (out_dir / "attribution.txt").write_text(format_attribution_table(attr), encoding="utf-8")
        return reports, status

    def factor(self, vs_benchmark: bool = False) -> tuple[str, dict]:
        """Factor regressions of both portfolios; ``vs_benchmark`` regresses the return over the benchmark instead of over RF."""
        out_dir = self.run_dir / "factor"
        out_dir.mkdir(parents=True, exist_ok=True)
        panel = load_factor_csv(self.cfg.require("factors"))
        sets = self.load_signal_sets()
        texts, payload = [], {}
        for label, weighting in (("MS-Eq", "equal"), ("MS-Cap", "cap")):
            try:
                rep = run_backtest(sets, self.prices, self.portfolio_config(weighting))
                models = run_factor_models(rep.net_returns(), panel, rep.benchmark_returns() if vs_benchmark else None)
            except MarketSenseError as exc:
                payload[label] = {"error": f"{type(exc).__name__}: {exc}"}
                continue
            payload[label] = models.to_dict()
            texts.append(f"{label}\n{format_factor_table(models)}")
        text = "\n".join(texts)
        (out_dir / "factors.txt").write_text(text, encoding="utf-8")
        (out_dir / "factors.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return text, payload
