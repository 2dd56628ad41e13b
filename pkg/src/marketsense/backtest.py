"""
Monthly-rebalanced, long-only portfolio simulation over buy signals.

Execution convention: a signal set dated D is executed at the close of the
first trading day on or after D (trading days come from the benchmark
series). Positions are marked to market at every close until the next
rebalance.

Cost convention: at a rebalance the planned trades are sized against the
pre-trade portfolio value; the fee is ``cost_bps * 1e-4`` of the planned
buy plus sell notional and is paid out of the portfolio, after which every
position is scaled to its target weight of the post-fee value. Post-trade
weights therefore equal the targets exactly and cash never goes negative.
"""

from __future__ import annotations

import bisect
import csv
import datetime as dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import analytics, audit
from .analytics import PriceBook, PriceSeries, TRADING_DAYS
from .errors import (
    CoverageGap,
    MissingMarketCap,
    MissingPrice,
    NegativeCash,
    NoDownside,
    PreconditionError,
    TooShort,
    ZeroVolatility,
)
from .factors import ols
from .signals import SignalSet, check_schedule

TRADE_TOL = 1e-9


@dataclass
class PortfolioConfig:
    weighting: str = "equal"
    cost_bps: float = 10.0
    initial_capital: float = 10_000.0
    benchmark: str = "SPX"
    rf_daily: float = 0.0
    end_date: dt.date | None = None

    def __post_init__(self):
        if self.weighting not in ("equal", "cap"):
            raise PreconditionError("weighting must be 'equal' or 'cap'")
        if self.cost_bps < 0:
            raise PreconditionError("cost_bps must be nonnegative")
        if self.initial_capital <= 0:
            raise PreconditionError("initial_capital must be positive")


@dataclass
class PortfolioState:
    cash: float
    holdings: dict[str, float] = field(default_factory=dict)

    def value(self, prices: Mapping[str, float]) -> float:
        return self.cash + sum(sh * prices[t] for t, sh in self.holdings.items())


@dataclass(frozen=True)
class Trade:
    ticker: str
    side: str
    shares: float
    price: float

    @property
    def notional(self) -> float:
        return abs(self.shares) * self.price


def target_weights(signals: SignalSet, caps: Mapping[str, float] | None, weighting: str) -> dict[str, float]:
    buys = signals.buys()
    if not buys:
        return {}
    if weighting == "equal":
        return {t: 1.0 / len(buys) for t in buys}
    if weighting != "cap":
        raise PreconditionError(f"unknown weighting {weighting!r}")
    caps = caps or {}
    missing = [t for t in buys if caps.get(t) is None or not math.isfinite(caps[t]) or caps[t] <= 0]
    if missing:
        raise MissingMarketCap(f"no market cap for {missing}")
    total = sum(caps[t] for t in buys)
    return {t: caps[t] / total for t in buys}


def rebalance(
    state: PortfolioState,
    weights: Mapping[str, float],
    prices: Mapping[str, float],
    cost_bps: float,
) -> tuple[PortfolioState, list[Trade], float]:
    """Move ``state`` to ``weights``; returns the new state, executed trades and fee paid."""
    tickers = sorted(set(state.holdings) | set(weights))
    missing = [t for t in tickers if t not in prices]
    if missing:
        raise MissingPrice(f"no execution price for {missing}")
    if sum(weights.values()) > 1.0 + 1e-12 or any(w < 0 for w in weights.values()):
        raise PreconditionError("weights must be nonnegative and sum to at most 1")
    value = state.value(prices)
    current = {t: state.holdings.get(t, 0.0) * prices[t] for t in tickers}
    planned = {t: weights.get(t, 0.0) * value - current[t] for t in tickers}
    if all(abs(d) <= TRADE_TOL * max(value, 1.0) for d in planned.values()):
        return PortfolioState(state.cash, dict(state.holdings)), [], 0.0
    cost = cost_bps * 1e-4 * sum(abs(d) for d in planned.values())
    post = value - cost
    if post <= 0:
        raise NegativeCash("fees exceed portfolio value")
    holdings, trades = {}, []
    for t in tickers:
        new_shares = weights.get(t, 0.0) * post / prices[t]
        delta = new_shares - state.holdings.get(t, 0.0)
        if abs(delta) * prices[t] > TRADE_TOL * max(value, 1.0):
            trades.append(Trade(t, "buy" if delta > 0 else "sell", delta, prices[t]))
        else:
            new_shares = state.holdings.get(t, 0.0)
        if new_shares > 0:
            holdings[t] = new_shares
    cash = post - sum(holdings[t] * prices[t] for t in holdings)
    if cash < -TRADE_TOL * max(value, 1.0):
        raise NegativeCash("rebalance left negative cash")
    return PortfolioState(cash, holdings), trades, cost


@dataclass
class RoundTrip:
    ticker: str
    entry_date: dt.date
    exit_date: dt.date
    net_return: float
    closed: bool


@dataclass
class _Run:
    equity: list[float]
    trades: list[tuple[dt.date, Trade]]
    costs: float
    round_trips: list[RoundTrip]


@dataclass
class BacktestReport:
    dates: list[dt.date]
    gross_equity: list[float]
    net_equity: list[float]
    benchmark_equity: list[float]
    total_return_pct_gross: float
    total_return_pct_net: float
    sharpe: float | None
    sortino: float | None
    volatility_pct: float
    mdd_pct: float
    mdd_duration_days: int
    total_trades: int
    round_trips: int
    win_rate_pct: float
    alpha_pct_annual: float
    beta: float
    avg_buy_signals_per_month: float
    sd_buy_signals_per_month: float
    total_costs: float
    benchmark_total_return_pct: float
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k not in ("dates", "gross_equity", "net_equity", "benchmark_equity")}
        d["start_date"] = self.dates[0].isoformat()
        d["end_date"] = self.dates[-1].isoformat()
        d["n_days"] = len(self.dates)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=str) + "\n"

    def write_equity_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "gross_equity", "net_equity", "benchmark_equity"])
            for row in zip(self.dates, self.gross_equity, self.net_equity, self.benchmark_equity):
                w.writerow([row[0].isoformat()] + [repr(float(v)) for v in row[1:]])

    def net_returns(self) -> analytics.ReturnSeries:
        r = analytics.simple_returns(self.net_equity)
        return analytics.ReturnSeries(tuple(self.dates[1:]), r.values)

    def benchmark_returns(self) -> analytics.ReturnSeries:
        r = analytics.simple_returns(self.benchmark_equity)
        return analytics.ReturnSeries(tuple(self.dates[1:]), r.values)


def _execution_days(sets: Sequence[SignalSet], calendar: Sequence[dt.date]) -> list[dt.date]:
    days = []
    for s in sets:
        k = bisect.bisect_left(calendar, s.rebalance_date)
        if k >= len(calendar):
            raise CoverageGap(f"no trading day on or after {s.rebalance_date}")
        days.append(calendar[k])
    if len(set(days)) != len(days):
        raise CoverageGap("two signal sets map to the same execution day")
    return days


def _simulate(book: PriceBook, sets, exec_days, calendar, cfg: PortfolioConfig, cost_bps: float) -> _Run:
    state = PortfolioState(cfg.initial_capital)
    schedule = dict(zip(exec_days, sets))
    c = cost_bps * 1e-4
    open_pos: dict[str, tuple[dt.date, float]] = {}
    trips: list[RoundTrip] = []
    trades: list[tuple[dt.date, Trade]] = []
    equity: list[float] = []
    costs = 0.0
    for day in calendar:
        with audit.clock(day):
            if day in schedule:
                sset = schedule[day]
                caps = None
                if cfg.weighting == "cap":
                    caps = {t: book.cap(t, day) for t in sset.buys()}
                weights = target_weights(sset, caps, cfg.weighting)
                px = {t: book.close(t, day) for t in sorted(set(state.holdings) | set(weights))}
                state, executed, fee = rebalance(state, weights, px, cost_bps)
                costs += fee
                trades.extend((day, t) for t in executed)
                for t in sorted(open_pos):
                    if t not in state.holdings:
                        entry_day, entry_px = open_pos.pop(t)
                        net = px[t] / entry_px * (1 - c) * (1 - c) - 1.0
                        trips.append(RoundTrip(t, entry_day, day, net, True))
                for t in sorted(state.holdings):
                    if t not in open_pos:
                        open_pos[t] = (day, px[t])
            marks = {t: book.mark(t, day) for t in state.holdings}
            equity.append(state.value(marks))
    last = calendar[-1]
    with audit.clock(last):
        for t in sorted(open_pos):
            entry_day, entry_px = open_pos[t]
            net = book.mark(t, last) / entry_px * (1 - c) - 1.0
            trips.append(RoundTrip(t, entry_day, last, net, False))
    return _Run(equity, trades, costs, trips)


def run_backtest(signal_sets: Sequence[SignalSet], prices: PriceBook | Mapping[str, PriceSeries], cfg: PortfolioConfig) -> BacktestReport:
    """Simulate gross (zero-cost) and net portfolios and compute the report metrics.

    Risk metrics (Sharpe, Sortino, volatility, drawdown) and alpha/beta are
    computed on the net-of-cost equity curve.
    """
    book = prices if isinstance(prices, PriceBook) else PriceBook(prices)
    sets = check_schedule(signal_sets)
    if not sets:
        raise PreconditionError("need at least one signal set")
    full_calendar = book.calendar(cfg.benchmark)
    exec_days = _execution_days(sets, full_calendar)
    end = cfg.end_date or full_calendar[-1]
    if end < exec_days[-1]:
        raise CoverageGap("end date precedes the last rebalance")
    calendar = [d for d in full_calendar if exec_days[0] <= d <= end]
    if len(calendar) < 2:
        raise CoverageGap("backtest window has fewer than two trading days")

    gross = _simulate(book, sets, exec_days, calendar, cfg, 0.0)
    net = _simulate(book, sets, exec_days, calendar, cfg, cfg.cost_bps) if cfg.cost_bps > 0 else gross

    with audit.clock(calendar[-1]):
        bench_px = np.array([book.mark(cfg.benchmark, d) for d in calendar])
    bench_eq = (cfg.initial_capital * bench_px / bench_px[0]).tolist()

    net_eq = np.asarray(net.equity)
    r = analytics.simple_returns(net_eq)
    rb = analytics.simple_returns(bench_px)
    try:
        sharpe = analytics.sharpe(r, cfg.rf_daily)
    except (ZeroVolatility, TooShort):
        sharpe = None
    try:
        sortino = analytics.sortino(r, cfg.rf_daily)
    except NoDownside:
        sortino = None
    mdd, mdd_days = analytics.max_drawdown(net_eq)
    vol = analytics.annualized_volatility(r) if len(r) >= 2 else 0.0
    alpha, beta = alpha_beta(r.values, rb.values, cfg.rf_daily)

    buys = [len(s.buys()) for s in sets]
    return BacktestReport(
        dates=list(calendar),
        gross_equity=list(gross.equity),
        net_equity=list(net.equity),
        benchmark_equity=bench_eq,
        total_return_pct_gross=100 * analytics.total_return(gross.equity),
        total_return_pct_net=100 * analytics.total_return(net.equity),
        sharpe=sharpe,
        sortino=sortino,
        volatility_pct=100 * vol,
        mdd_pct=100 * mdd,
        mdd_duration_days=mdd_days,
        total_trades=len(net.trades),
        round_trips=len(net.round_trips),
        win_rate_pct=analytics.win_rate([t.net_return for t in net.round_trips]),
        alpha_pct_annual=100 * alpha * TRADING_DAYS,
        beta=beta,
        avg_buy_signals_per_month=float(np.mean(buys)),
        sd_buy_signals_per_month=float(np.std(buys, ddof=1)) if len(buys) > 1 else 0.0,
        total_costs=net.costs,
        benchmark_total_return_pct=100 * analytics.total_return(bench_eq),
        config={
            "weighting": cfg.weighting,
            "cost_bps": cfg.cost_bps,
            "initial_capital": cfg.initial_capital,
            "benchmark": cfg.benchmark,
            "rf_daily": cfg.rf_daily,
        },
    )


def alpha_beta(portfolio_returns, benchmark_returns, rf_daily: float = 0.0) -> tuple[float, float]:
    """Daily intercept and slope of portfolio excess returns on benchmark excess returns."""
    y = np.asarray(portfolio_returns, dtype=np.float64) - rf_daily
    x = np.asarray(benchmark_returns, dtype=np.float64) - rf_daily
    X = np.column_stack([np.ones(len(x)), x])
    res = ols(y, X)
    return float(res.params[0]), float(res.params[1])


@dataclass
class AttributionRow:
    beta: float
    alpha_pct_annual: float
    total_trades: int
    win_rate_pct: float
    buy_signals_mean: float
    buy_signals_sd: float


def attribution(report: BacktestReport, signal_sets: Sequence[SignalSet]) -> AttributionRow:
    if len(signal_sets) < 2:
        raise PreconditionError("attribution needs at least two rebalance dates")
    counts = np.array([len(s.buys()) for s in signal_sets], dtype=np.float64)
    return AttributionRow(
        beta=report.beta,
        alpha_pct_annual=report.alpha_pct_annual,
        total_trades=report.total_trades,
        win_rate_pct=report.win_rate_pct,
        buy_signals_mean=float(counts.mean()),
        buy_signals_sd=float(counts.std(ddof=1)),
    )


def constituent_index(
    prices: PriceBook | Mapping[str, PriceSeries],
    tickers: Sequence[str],
    rebalance_dates: Sequence[dt.date],
    calendar_ticker: str,
    weighting: str = "equal",
    name: str = "INDEX",
    base: float = 100.0,
) -> PriceSeries:
    """Build a monthly-rebalanced index level series from constituent prices.

    Between rebalances the level is ``L_reb * sum_i w_i * p_i(t) / p_i(reb)``.
    """
    book = prices if isinstance(prices, PriceBook) else PriceBook(prices)
    calendar = book.calendar(calendar_ticker)
    start = bisect.bisect_left(calendar, rebalance_dates[0])
    if start >= len(calendar):
        raise CoverageGap("index start is past the calendar")
    days = list(calendar[start:])
    resets = {}
    for d in rebalance_dates:
        k = bisect.bisect_left(calendar, d)
        if k < len(calendar):
            resets[calendar[k]] = d
    level = base
    anchor: dict[str, float] = {}
    weights: dict[str, float] = {}
    levels = []
    for day in days:
        if day in resets:
            if anchor:
                level = level * sum(w * book[t].close_on(day) / anchor[t] for t, w in weights.items())
            if weighting == "equal":
                weights = {t: 1.0 / len(tickers) for t in tickers}
            else:
                caps = {t: book[t].cap_on(day) for t in tickers}
                if any(c is None for c in caps.values()):
                    raise MissingMarketCap("constituent missing market cap")
                total = sum(caps.values())
                weights = {t: caps[t] / total for t in tickers}
            anchor = {t: book[t].close_on(day) for t in tickers}
            levels.append(level)
            continue
        levels.append(level * sum(w * book[t].last_close_on_or_before(day) / anchor[t] for t, w in weights.items()))
    return PriceSeries(name, tuple(days), np.array(levels))


def _fmt(x, spec: str) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "n/a"
    return format(x, spec)


def format_performance_table(reports: Mapping[str, BacktestReport]) -> str:
    """Plain-text performance table; net-of-cost return in parentheses."""
    header = ["Portfolio", "Return", "Sharpe", "Sortino", "Vol", "MDD", "MDDd"]
    rows = [header]
    for name, r in reports.items():
        rows.append(
            [
                name,
                f"{r.total_return_pct_gross:.1f} ({r.total_return_pct_net:.1f})",
                _fmt(r.sharpe, ".2f"),
                _fmt(r.sortino, ".2f"),
                f"{r.volatility_pct:.1f}",
                f"{r.mdd_pct:.1f}",
                str(r.mdd_duration_days),
            ]
        )
    foot = [
        "Return: total return (%); value in parentheses is after transaction costs ({}bps/trade).".format(
            _fmt(next(iter(reports.values())).config.get("cost_bps"), "g") if reports else "?"
        ),
        "MDDd: duration of the maximum drawdown in trading days.",
    ]
    return _table(rows) + "\n".join(foot) + "\n"


def format_attribution_table(rows_in: Mapping[str, AttributionRow]) -> str:
    header = ["Portfolio", "Beta", "Alpha (%)", "Total Trades", "Win Rate (%)", "Buy Signals"]
    rows = [header]
    for name, a in rows_in.items():
        rows.append(
            [
                name,
                f"{a.beta:.2f}",
                f"{a.alpha_pct_annual:.1f}",
                str(a.total_trades),
                _fmt(a.win_rate_pct, ".1f"),
                f"{a.buy_signals_mean:.1f} ({a.buy_signals_sd:.2f})",
            ]
        )
    return _table(rows) + "Buy Signals: mean monthly count; standard deviation in parentheses.\n"


def _table(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = [" | ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
