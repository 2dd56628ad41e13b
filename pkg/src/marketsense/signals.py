"""Trade signals and the signals CSV (``rebalance_date,ticker,action,explanation_path``)."""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import PreconditionError

ACTIONS = ("buy", "hold", "sell")


@dataclass(frozen=True)
class TradeSignal:
    ticker: str
    as_of_date: dt.date
    action: str
    explanation: str = ""
    explanation_path: str = ""

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise PreconditionError(f"action must be one of {ACTIONS}, got {self.action!r}")


@dataclass(frozen=True)
class SignalSet:
    rebalance_date: dt.date
    signals: Mapping[str, TradeSignal] = field(default_factory=dict)

    def buys(self) -> list[str]:
        return sorted(t for t, s in self.signals.items() if s.action == "buy")


def check_schedule(sets: Iterable[SignalSet]) -> list[SignalSet]:
    sets = list(sets)
    for a, b in zip(sets, sets[1:]):
        if b.rebalance_date <= a.rebalance_date:
            raise PreconditionError("rebalance dates must be strictly increasing")
    return sets


def read_signals_csv(path: str | Path) -> list[SignalSet]:
    grouped: dict[dt.date, dict[str, TradeSignal]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            day = dt.date.fromisoformat(row["rebalance_date"])
            ticker = row["ticker"].strip()
            sig = TradeSignal(ticker, day, row["action"].strip().lower(), explanation_path=row.get("explanation_path", "") or "")
            bucket = grouped.setdefault(day, {})
            if ticker in bucket:
                raise PreconditionError(f"duplicate signal for {ticker} on {day}")
            bucket[ticker] = sig
    return [SignalSet(d, grouped[d]) for d in sorted(grouped)]


def write_signals_csv(path: str | Path, sets: Iterable[SignalSet]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rebalance_date", "ticker", "action", "explanation_path"])
        for s in sets:
            for ticker in sorted(s.signals):
                sig = s.signals[ticker]
                w.writerow([s.rebalance_date.isoformat(), ticker, sig.action, sig.explanation_path])
