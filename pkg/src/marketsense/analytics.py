"""
Price and return mathematics shared by the Dynamics agent and the backtester.

All ratios are annualized with 252 trading days and use simple returns.
"""

from __future__ import annotations

import bisect
import csv
import datetime as dt
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import audit
from .errors import CoverageGap, MissingPrice, NoDownside, PreconditionError, TooShort, ZeroVolatility

TRADING_DAYS = 252
WINDOWS = {"1y": 252, "6m": 126, "3m": 63}


def _as_date(x) -> dt.date:
    if isinstance(x, dt.datetime):
        return x.date()
    if isinstance(x, dt.date):
        return x
    return dt.date.fromisoformat(str(x))


@dataclass(frozen=True)
class PriceSeries:
    ticker: str
    dates: tuple[dt.date, ...]
    closes: np.ndarray
    market_caps: np.ndarray | None = None

    def __post_init__(self):
        dates = tuple(_as_date(d) for d in self.dates)
        closes = np.asarray(self.closes, dtype=np.float64)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "closes", closes)
        if closes.shape != (len(dates),):
            raise PreconditionError("dates and closes must have the same length")
        if any(b <= a for a, b in zip(dates, dates[1:])):
            raise PreconditionError(f"{self.ticker}: dates must be strictly increasing")
        if len(closes) and not (np.all(np.isfinite(closes)) and np.all(closes > 0)):
            raise PreconditionError(f"{self.ticker}: adjusted closes must be positive")
        if self.market_caps is not None:
            caps = np.asarray(self.market_caps, dtype=np.float64)
            if caps.shape != closes.shape:
                raise PreconditionError("market_caps must align with closes")
            object.__setattr__(self, "market_caps", caps)

    def __len__(self) -> int:
        return len(self.dates)

    def until(self, as_of: dt.date) -> "PriceSeries":
        """Observations dated on or before ``as_of``."""
        k = bisect.bisect_right(self.dates, _as_date(as_of))
        caps = None if self.market_caps is None else self.market_caps[:k]
        return PriceSeries(self.ticker, self.dates[:k], self.closes[:k], caps)

    def position(self, day: dt.date) -> int | None:
        k = bisect.bisect_left(self.dates, day)
        return k if k < len(self.dates) and self.dates[k] == day else None

    def close_on(self, day: dt.date) -> float:
        k = self.position(day)
        if k is None:
            raise MissingPrice(f"{self.ticker} has no close on {day}")
        return float(self.closes[k])

    def last_close_on_or_before(self, day: dt.date) -> float:
        k = bisect.bisect_right(self.dates, day) - 1
        if k < 0:
            raise MissingPrice(f"{self.ticker} has no close on or before {day}")
        return float(self.closes[k])

    def cap_on(self, day: dt.date) -> float | None:
        if self.market_caps is None:
            return None
        k = bisect.bisect_right(self.dates, day) - 1
        if k < 0 or not np.isfinite(self.market_caps[k]):
            return None
        return float(self.market_caps[k])


@dataclass(frozen=True)
class ReturnSeries:
    dates: tuple[dt.date, ...]
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)


def _values(r) -> np.ndarray:
    if isinstance(r, ReturnSeries):
        return r.values
    return np.asarray(r, dtype=np.float64)


def simple_returns(p: PriceSeries | Sequence[float]) -> ReturnSeries:
    """r_t = p_t / p_{t-1} - 1; dated by the later observation."""
    if isinstance(p, PriceSeries):
        closes, dates = p.closes, p.dates
    else:
        closes = np.asarray(p, dtype=np.float64)
        dates = tuple(range(len(closes)))
    if len(closes) < 2:
        raise TooShort("need at least 2 prices")
    return ReturnSeries(tuple(dates[1:]), closes[1:] / closes[:-1] - 1.0)


def annualized_volatility(r) -> float:
    x = _values(r)
    if len(x) < 2:
        raise TooShort("need at least 2 returns")
    if np.ptp(x) == 0:
        return 0.0
    return float(np.std(x, ddof=1) * math.sqrt(TRADING_DAYS))


def sharpe(r, rf_daily: float = 0.0) -> float:
    x = _values(r) - rf_daily
    if len(x) < 2:
        raise TooShort("need at least 2 returns")
    sd = np.std(x, ddof=1)
    if np.ptp(x) == 0 or sd == 0:
        raise ZeroVolatility("excess returns have zero dispersion")
    return float(np.mean(x) / sd * math.sqrt(TRADING_DAYS))


def sortino(r, mar_daily: float = 0.0) -> float:
    """Mean excess over downside deviation; the deviation averages over all n returns."""
    x = _values(r) - mar_daily
    if len(x) == 0 or not np.any(x < 0):
        raise NoDownside("no return below the minimum acceptable return")
    downside = np.minimum(x, 0.0)
    dd = math.sqrt(float(np.mean(downside * downside)))
    return float(np.mean(x) / dd * math.sqrt(TRADING_DAYS))


def max_drawdown(equity: Sequence[float]) -> tuple[float, int]:
    """Largest peak-to-trough loss and its peak-to-recovery duration in observations.

    The episode opens at the last time equity sat at the running peak before the
    trough; it closes at the first later observation at or above that peak, or
    at the end of the series when equity never recovers.
    """
    e = np.asarray(equity, dtype=np.float64)
    if len(e) == 0:
        raise PreconditionError("need at least one equity value")
    if np.any(e <= 0):
        raise PreconditionError("equity values must be positive")
    peak = np.maximum.accumulate(e)
    dd = (peak - e) / peak
    trough = int(np.argmax(dd))
    mdd = float(dd[trough])
    if mdd <= 0:
        return 0.0, 0
    level = peak[trough]
    peak_idx = int(np.nonzero(e[: trough + 1] == level)[0][-1])
    rec = np.nonzero(e[trough + 1:] >= level)[0]
    end = trough + 1 + int(rec[0]) if len(rec) else len(e) - 1
    return mdd, end - peak_idx


def total_return(equity: Sequence[float]) -> float:
    e = np.asarray(equity, dtype=np.float64)
    if len(e) < 1:
        raise TooShort("empty equity curve")
    return float(e[-1] / e[0] - 1.0)


def win_rate(trade_returns: Sequence[float]) -> float:
    """Percentage of round trips with a strictly positive return."""
    x = np.asarray(trade_returns, dtype=np.float64)
    if len(x) == 0:
        return float("nan")
    return float(100.0 * np.count_nonzero(x > 0) / len(x))


def snapshot(series: PriceSeries, rf_daily: float = 0.0) -> dict:
    """Trailing-window summary used by the Dynamics agent.

    Returns total return over the last 1y/6m/3m (shorter when history is
    shorter) plus volatility, Sharpe and max drawdown over the trailing year.
    Sharpe is ``None`` when the window has no dispersion.
    """
    closes = series.closes
    out = {}
    for label, n in WINDOWS.items():
        start = max(0, len(closes) - 1 - n)
        out[f"return_{label}"] = float(closes[-1] / closes[start] - 1.0)
    window = closes[max(0, len(closes) - 1 - WINDOWS["1y"]):]
    r = simple_returns(window)
    out["volatility"] = annualized_volatility(r)
    try:
        out["sharpe"] = sharpe(r, rf_daily)
    except ZeroVolatility:
        out["sharpe"] = None
    out["max_drawdown"], out["mdd_duration"] = max_drawdown(window)
    return out


class PriceBook:
    """Audited read access to a set of price series."""

    def __init__(self, series: Mapping[str, PriceSeries]):
        self.series = dict(series)

    def __contains__(self, ticker: str) -> bool:
        return ticker in self.series

    def __getitem__(self, ticker: str) -> PriceSeries:
        return self.series[ticker]

    def tickers(self) -> list[str]:
        return sorted(self.series)

    def history(self, ticker: str, as_of: dt.date) -> PriceSeries:
        if ticker not in self.series:
            raise MissingPrice(f"no price series for {ticker}")
        s = self.series[ticker].until(as_of)
        if len(s):
            audit.note("price", ticker, s.dates[-1])
        return s

    def close(self, ticker: str, day: dt.date) -> float:
        if ticker not in self.series:
            raise MissingPrice(f"no price series for {ticker}")
        audit.note("price", ticker, day)
        return self.series[ticker].close_on(day)

    def mark(self, ticker: str, day: dt.date) -> float:
        """Last close on or before ``day`` (forward-filled mark)."""
        if ticker not in self.series:
            raise MissingPrice(f"no price series for {ticker}")
        s = self.series[ticker]
        k = bisect.bisect_right(s.dates, day) - 1
        if k < 0:
            raise MissingPrice(f"{ticker} has no close on or before {day}")
        audit.note("price", ticker, s.dates[k])
        return float(s.closes[k])

    def cap(self, ticker: str, day: dt.date) -> float | None:
        s = self.series.get(ticker)
        if s is None:
            return None
        audit.note("market_cap", ticker, day)
        return s.cap_on(day)

    def calendar(self, ticker: str) -> tuple[dt.date, ...]:
        if ticker not in self.series:
            raise CoverageGap(f"no series for calendar ticker {ticker}")
        return self.series[ticker].dates


def load_prices_csv(path: str | Path) -> dict[str, PriceSeries]:
    """Read ``date,ticker,adj_close,market_cap`` rows into per-ticker series."""
    rows: dict[str, list[tuple[dt.date, float, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"date", "ticker", "adj_close"} - set(reader.fieldnames or ())
        if missing:
            raise PreconditionError(f"price CSV missing columns {sorted(missing)}")
        for row in reader:
            cap = (row.get("market_cap") or "").strip()
            rows.setdefault(row["ticker"].strip(), []).append(
                (dt.date.fromisoformat(row["date"].strip()), float(row["adj_close"]), float(cap) if cap else math.nan)
            )
    out = {}
    for ticker, obs in rows.items():
        obs.sort(key=lambda t: t[0])
        caps = np.array([o[2] for o in obs])
        out[ticker] = PriceSeries(
            ticker,
            tuple(o[0] for o in obs),
            np.array([o[1] for o in obs]),
            None if np.all(np.isnan(caps)) else caps,
        )
    return out


def write_prices_csv(path: str | Path, series: Iterable[PriceSeries]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "ticker", "adj_close", "market_cap"])
        for s in series:
            for i, d in enumerate(s.dates):
                cap = "" if s.market_caps is None or not np.isfinite(s.market_caps[i]) else repr(float(s.market_caps[i]))
                w.writerow([d.isoformat(), s.ticker, repr(float(s.closes[i])), cap])
