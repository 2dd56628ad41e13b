"""Builder for the bundled fixture universe (five tickers, four rebalance dates).

Run ``python3 tests/universe.py tests/fixtures/universe`` to regenerate the
inputs and re-record the cassette with the scripted fixture model.
"""

from __future__ import annotations

import datetime as dt
import json
import shutil
import sys
from pathlib import Path

import numpy as np

TICKERS = ["AAA", "BBB", "CCC", "DDD", "EEE"]
PEERS = {"AAA": ["BBB", "CCC"], "BBB": ["AAA"], "CCC": ["DDD", "EEE"], "DDD": ["CCC"], "EEE": ["AAA", "DDD"]}
BENCH = "SPX"
REBALANCE = ["2024-02-01", "2024-03-01", "2024-04-01", "2024-05-01"]
START, END = dt.date(2023, 1, 2), dt.date(2024, 6, 28)
TIMESTAMP = "2024-06-30T00:00:00+00:00"

CONFIG = f"""\
[paths]
corpus = "corpus"
prices = "prices.csv"
factors = "factors.csv"
news = "news.jsonl"
fundamentals = "fundamentals.json"
cassette = "cassette.json"
eval_cases = "eval_cases.json"
sentiment = "sentiment.csv"

[universe]
tickers = {json.dumps(TICKERS)}
benchmark = "{BENCH}"

[universe.peers]
{chr(10).join(f'{k} = {json.dumps(v)}' for k, v in PEERS.items())}

[schedule]
rebalance_dates = {json.dumps(REBALANCE)}

[gateway]
mode = "replay"
embedder = "mock"
embed_dim = 32
embed_seed = 7

[portfolio]
weighting = "equal"
cost_bps = 10.0
initial_capital = 10000.0

[retrieval]
lookback_days = 30
top_n = 3

[agents]
news_lookback_days = 14
fundamentals_mode = "full"

[run]
root = "runs"
ingest_timestamp = "{TIMESTAMP}"
"""

MACRO_TOPICS = [
    ("Federal Reserve", "2024-01-15", "Policy rates were held steady. Inflation continued to moderate toward the target. Labor markets remain tight but are cooling. The committee will stay data dependent."),
    ("Global Bank Research", "2024-01-26", "U.S. growth surprised to the upside in the fourth quarter. Consumer spending stayed resilient. Equity valuations look stretched relative to bond yields. We prefer quality stocks."),
    ("Federal Reserve", "2024-02-12", "Minutes show officials see risks as more balanced. Several participants cautioned against cutting rates too early. Services inflation is sticky. Financial conditions have eased."),
    ("Strategy Partners", "2024-02-21", "Earnings revisions turned positive for technology. Contradictory signals come from weak manufacturing surveys. Credit spreads are tight. Volatility is subdued."),
    ("Global Bank Research", "2024-03-08", "Payrolls rose strongly in February. Wage growth slowed. Markets price three rate cuts this year. The yield curve remains inverted."),
    ("Federal Reserve", "2024-03-20", "The committee projected lower rates by year end. Growth forecasts were revised higher. Inflation projections edged up. Balance sheet runoff may slow soon."),
    ("Strategy Partners", "2024-04-11", "Inflation data surprised to the upside. Bond yields rose sharply. Risk factors include geopolitical tension and oil prices. Small caps lagged large caps."),
    ("Global Bank Research", "2024-04-24", "First quarter earnings beat expectations broadly. Margins held up despite wage pressure. Positive indicators include strong housing starts. Negative indicators include falling savings."),
    ("Federal Reserve", "2024-06-12", "Officials now expect only one rate cut this year. Inflation progress has stalled. The labor market is coming into better balance. Policy will remain restrictive."),
]


def _business_days(a: dt.date, b: dt.date) -> list[dt.date]:
    out, d = [], a
    while d <= b:
        if d.weekday() < 5:
            out.append(d)
        d += dt.timedelta(days=1)
    return out


def _write_prices(dest: Path, days: list[dt.date], rng) -> None:
    n = len(days)
    market = rng.normal(0.0004, 0.009, n)
    rows = ["date,ticker,adj_close,market_cap"]
    shares = {"AAA": 5e9, "BBB": 2e9, "CCC": 1e9, "DDD": 8e8, "EEE": 3e9}
    series = {}
    for i, t in enumerate(TICKERS):
        beta = 0.8 + 0.1 * i
        r = beta * market + rng.normal(0.0002, 0.012, n)
        r[0] = 0.0
        series[t] = (50.0 + 10 * i) * np.cumprod(1 + r)
    bench_r = market.copy()
    bench_r[0] = 0.0
    bench = 4000.0 * np.cumprod(1 + bench_r)
    for k, d in enumerate(days):
        for t in TICKERS:
            p = round(float(series[t][k]), 4)
            rows.append(f"{d.isoformat()},{t},{p!r},{p * shares[t]!r}")
        rows.append(f"{d.isoformat()},{BENCH},{round(float(bench[k]), 4)!r},")
    (dest / "prices.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")


def _write_factors(dest: Path, days: list[dt.date], rng) -> None:
    lines = ["Synthetic daily factors (percent)", "", "Date,Mkt-RF,SMB,HML,RMW,CMA,RF,Mom"]
    for d in days:
        vals = rng.normal(0, [0.9, 0.5, 0.5, 0.3, 0.3, 0.0, 0.6])
        vals[5] = 0.02
        lines.append(d.strftime("%Y%m%d") + "," + ",".join(f"{v:.4f}" for v in vals))
    lines.append("")
    lines.append("Copyright fixture data")
    (dest / "factors.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_corpus(dest: Path) -> None:
    macro = dest / "corpus" / "macro_report"
    macro.mkdir(parents=True)
    for i, (pub, date, text) in enumerate(MACRO_TOPICS):
        header = f"Publisher: {pub}\nDate: {date}\nTitle: Macro note {i + 1}\n"
        if i == 4:
            header += "Pages: 35\n"
        body = text + "\nDisclaimer: for information only.\n"
        (macro / f"note_{i + 1:02d}.txt").write_text(header + "\n" + body, encoding="utf-8")
    # dated only through the sidecar
    (macro / "note_sidecar.txt").write_text(
        "Housing activity picked up in early spring. Mortgage rates eased slightly. Builders reported stronger demand.\n",
        encoding="utf-8",
    )
    (macro / "note_sidecar.txt.meta.json").write_text(
        json.dumps({"publisher": "Housing Institute", "publication_date": "2024-03-25", "url": "https://example.org/housing"}) + "\n",
        encoding="utf-8",
    )
    (macro / "brochure.txt").write_text(
        "Publisher: Event Co\nDate: 2024-02-05\n\nJoin our exclusive brochure launch and invitation-only gala. Tickets are limited.\n",
        encoding="utf-8",
    )

    filings = dest / "corpus" / "sec_filing"
    calls = dest / "corpus" / "earnings_call"
    filings.mkdir(parents=True)
    calls.mkdir(parents=True)
    for i, t in enumerate(TICKERS):
        (filings / f"{t}_10Q_2024Q1.txt").write_text(
            "<SEC-HEADER>\n"
            "CONFORMED SUBMISSION TYPE: 10-Q\n"
            f"COMPANY CONFORMED NAME: {t} Corp\n"
            f"TRADING SYMBOL: {t}\n"
            f"FILED AS OF DATE: 202401{20 + i:02d}\n"
            "</SEC-HEADER>\n"
            f"{t} Corp reported higher revenue driven by new products. Risk factors include supply chain disruption. "
            "Management expanded the share buyback program.\n",
            encoding="utf-8",
        )
        (calls / f"{t}_call_2024Q1.txt").write_text(
            f"{t} Corp ({t}) Q4 2023 Earnings Call\nJanuary {25 + i}, 2024\n\n"
            f"Operator: Welcome to the {t} call. CEO: We delivered record margins and expect continued growth. "
            "Analyst: How durable is demand? CEO: Our backlog gives us confidence.\n",
            encoding="utf-8",
        )
    (filings / "AAA_10Q_2024Q2.txt").write_text(
        "<SEC-HEADER>\nCONFORMED SUBMISSION TYPE: 10-Q\nCOMPANY CONFORMED NAME: AAA Corp\nTRADING SYMBOL: AAA\n"
        "FILED AS OF DATE: 20240422\n</SEC-HEADER>\n"
        "AAA Corp saw margin pressure from input costs. A new litigation matter was disclosed.\n",
        encoding="utf-8",
    )


def _write_news(dest: Path, days: list[dt.date], rng) -> None:
    rows = []
    window = [d for d in days if dt.date(2024, 1, 10) <= d <= dt.date(2024, 6, 20)]
    for t in TICKERS:
        for d in window:
            if rng.random() < 0.15:
                kind = ["launched a product", "was upgraded by an analyst", "announced a partnership", "faced a lawsuit"][int(rng.integers(4))]
                rows.append({"date": d.isoformat(), "ticker": t, "text": f"{t} {kind} on {d.isoformat()}. Shares moved in response."})
    (dest / "news.jsonl").write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows), encoding="utf-8")


def _write_fundamentals(dest: Path, rng) -> None:
    ends = ["2022-12-31", "2023-03-31", "2023-06-30", "2023-09-30", "2023-12-31", "2024-03-31"]
    out = {}
    for i, t in enumerate(TICKERS):
        qs, rev = [], 1e9 * (1 + i)
        for e in ends:
            rev *= 1 + rng.normal(0.02, 0.03)
            end = dt.date.fromisoformat(e)
            qs.append({
                "period_end": e,
                "filed_date": (end + dt.timedelta(days=35)).isoformat(),
                "revenue": round(rev, 2),
                "net_income": round(rev * 0.12, 2),
                "eps": round(1.0 + 0.1 * i + rng.normal(0, 0.05), 4),
                "operating_cash_flow": round(rev * 0.18, 2),
                "total_debt": round(4e8 * (1 + i), 2),
                "total_equity": round(2e9 * (1 + i), 2),
                "cash": round(3e8 * (1 + i), 2),
            })
        out[t] = qs
    (dest / "fundamentals.json").write_text(json.dumps(out, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _write_eval(dest: Path) -> None:
    cases = [
        {"question": "What is the outlook for inflation and policy rates?", "as_of_date": "2024-03-22",
         "ground_truth_statements": ["Inflation projections edged up.", "The committee projected lower rates by year end."]},
        {"question": "How strong is the labor market and wage growth?", "as_of_date": "2024-03-22",
         "ground_truth_statements": ["Payrolls rose strongly in February.", "Wage growth slowed."]},
        {"question": "What are the main risks for equity markets?", "as_of_date": "2024-04-26",
         "ground_truth_statements": ["Risk factors include geopolitical tension and oil prices.", "Bond yields rose sharply."]},
    ]
    (dest / "eval_cases.json").write_text(json.dumps(cases, indent=1) + "\n", encoding="utf-8")


SENTIMENT_PAIRS = [
    (0.31, 0.55), (0.12, 0.40), (-0.25, 0.10), (0.60, 0.72), (0.45, 0.20), (0.05, -0.30),
    (0.88, 1.00), (0.37, 0.44), (-0.61, -0.85), (0.53, 0.81), (0.20, 0.08), (0.70, 0.36),
]


def build_inputs(dest: Path) -> Path:
    dest = Path(dest)
    if dest.exists():
        shutil.rmtree(dest)
    dest.mkdir(parents=True)
    rng = np.random.default_rng(20240101)
    days = _business_days(START, END)
    _write_prices(dest, days, rng)
    _write_factors(dest, days, rng)
    _write_corpus(dest)
    _write_news(dest, days, rng)
    _write_fundamentals(dest, rng)
    _write_eval(dest)
    (dest / "sentiment.csv").write_text("full,basic\n" + "".join(f"{a},{b}\n" for a, b in SENTIMENT_PAIRS), encoding="utf-8")
    (dest / "config.toml").write_text(CONFIG, encoding="utf-8")
    return dest


def record(dest: Path) -> None:
    """Run the whole pipeline in record mode against the fixture model."""
    sys.path.insert(0, str(Path(__file__).parent))
    from llmfake import FakeTransport, fixture_model
    from marketsense.cli import main

    run = dest / "_record_run"
    cfg = str(dest / "config.toml")
    for cmd in (["ingest"], ["signals"], ["rag-eval"]):
        code = main(["--config", cfg, "--mode", "record", "--run-dir", str(run)] + cmd, transport=FakeTransport(fixture_model))
        if code != 0:
            raise SystemExit(f"recording {cmd} failed with exit code {code}")
    shutil.rmtree(run)


if __name__ == "__main__":
    target = Path(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parent / "fixtures" / "universe")
    build_inputs(target)
    record(target)
    print(f"fixture universe written to {target}")
