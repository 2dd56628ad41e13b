"""
Backtest walkthrough on synthetic prices.

Builds a small price book with a random-walk benchmark, draws random
buy/hold/sell signals each month, and prints the performance and
attribution tables plus a cost sweep and factor regression.

    python3 demos/backtest_walkthrough.py
"""
import datetime as dt

import numpy as np

from marketsense.analytics import PriceSeries
from marketsense.backtest import (
    PortfolioConfig, attribution, format_attribution_table,
    format_performance_table, run_backtest,
)
from marketsense.factors import FactorPanel, format_factor_table, run_factor_models
from marketsense.signals import SignalSet, TradeSignal

rng = np.random.default_rng(42)

# ---- prices: 8 names loaded on a common market factor
days = []
d = dt.date(2023, 1, 2)
while len(days) < 380:
    if d.weekday() < 5:
        days.append(d)
    d += dt.timedelta(days=1)
n = len(days)
mkt = rng.normal(0.0004, 0.009, n)

book = {}
tickers = [f"S{i}" for i in range(8)]
for i, t in enumerate(tickers):
    beta = 0.6 + 0.1 * i
    r = beta * mkt + rng.normal(0.0001, 0.012, n)
    closes = 30.0 * (1 + i) * np.cumprod(1 + r)
    book[t] = PriceSeries(t, tuple(days), closes, closes * 2e6 * (8 - i))
book["SPX"] = PriceSeries("SPX", tuple(days), 4000 * np.cumprod(1 + mkt))

# ---- monthly signals: first trading day of each month
firsts = [x for k, x in enumerate(days) if k == 0 or x.month != days[k - 1].month][:12]
signal_sets = []
for day in firsts:
    acts = rng.choice(["buy", "hold", "sell"], size=len(tickers), p=[0.5, 0.3, 0.2])
    signal_sets.append(SignalSet(day, {t: TradeSignal(t, day, str(a)) for t, a in zip(tickers, acts)}))

reports, attr = {}, {}
for label, weighting in (("Eq", "equal"), ("Cap", "cap")):
    reports[label] = run_backtest(signal_sets, book, PortfolioConfig(weighting, cost_bps=10))
    attr[label] = attribution(reports[label], signal_sets)
bench = [SignalSet(firsts[0], {"SPX": TradeSignal("SPX", firsts[0], "buy")})]
reports["SPX"] = run_backtest(bench, book, PortfolioConfig("equal", cost_bps=0))

print(format_performance_table(reports))
print(format_attribution_table(attr))

# ---- how much do costs eat?
print("\ncost sweep (equal weight):")
for bps in (0, 5, 10, 20, 50):
    rep = run_backtest(signal_sets, book, PortfolioConfig("equal", cost_bps=bps))
    print(f"  {bps:>3} bps  final value {rep.net_equity[-1]:10.2f}  costs {rep.total_costs:8.2f}")

# ---- factor regressions against a synthetic panel built around the same market series
cols = {"Mkt-RF": mkt - 0.0001, "RF": np.full(n, 0.0001)}
for f in ("SMB", "HML", "RMW", "CMA", "Mom"):
    cols[f] = rng.normal(0, 0.005, n)
panel = FactorPanel(tuple(days), cols)
models = run_factor_models(reports["Eq"].net_returns(), panel)
print()
print(format_factor_table(models), end="")
