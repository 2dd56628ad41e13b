import datetime as dt

import numpy as np
import pytest

from marketsense import analytics
from marketsense.agents import (
    FundamentalsQuarter,
    abbreviate_figure,
    dynamics_report,
    dynamics_table,
    earnings_call_summary,
    filing_summary,
    fundamentals_consolidation,
    news_progressive_summary,
    parse_signal,
    pct_change,
    quarterly_delta_table,
    signal_decision,
)
from marketsense.analytics import PriceSeries
from marketsense.errors import InsufficientHistory, InsufficientQuarters, NonFiniteInput, PreconditionError, UnparseableSignal
from marketsense.ingestion import Document
from marketsense.reports import AgentReport

from llmfake import scripted_gateway, table_responder

DAY = dt.date(2024, 3, 1)


def _news_gw():
    return scripted_gateway(table_responder({"news_condense": "today", "news_merge": "merged"}))


def test_news_no_articles_carries_previous_without_calls():
    gw = _news_gw()
    rep = news_progressive_summary("AAA", DAY, [], "P", gw)
    assert rep.text == "P"
    assert len(gw.calls) == 0
    with pytest.raises(PreconditionError):
        news_progressive_summary("AAA", DAY, [], "", gw)


def test_news_call_counts():
    gw = _news_gw()
    assert news_progressive_summary("AAA", DAY, ["a1", "a2"], "", gw).text == "today"
    assert gw.count("completion") == 1
    gw = _news_gw()
    assert news_progressive_summary("AAA", DAY, ["a1"], "P", gw).text == "merged"
    assert gw.count("completion") == 2


@pytest.mark.parametrize(
    "x,out",
    [
        (1_234_567_890, "1.23B"),
        (-4_500_000, "-4.50M"),
        (0, "0.00"),
        (999.995, "1000.00"),
        (1_500, "1.50K"),
        (0.125, "0.13"),
        (-0.125, "-0.13"),
        (2.675, "2.68"),
        (-0.001, "0.00"),
        (1e12, "1000.00B"),
    ],
)
def test_abbreviate_figure(x, out):
    assert abbreviate_figure(x) == out


def test_abbreviate_rejects_non_finite():
    for bad in (float("nan"), float("inf")):
        with pytest.raises(NonFiniteInput):
            abbreviate_figure(bad)


def _q(i, revenue=100e6, **kw):
    base = dict(net_income=10e6, eps=1.0, operating_cash_flow=12e6, total_debt=50e6, total_equity=80e6, cash=20e6)
    base.update(kw)
    return FundamentalsQuarter(dt.date(2023, 3, 31) + dt.timedelta(days=91 * i), revenue, **base)


def test_delta_table_qoq_and_na():
    assert pct_change(100e6, 110e6) == "+10.00%"
    assert pct_change(0.0, 5.0) == "n/m"
    assert pct_change(-50.0, -25.0) == "+50.00%"
    table = quarterly_delta_table([_q(0, 100e6, net_income=0.0), _q(1, 110e6, net_income=3e6)])
    lines = table.splitlines()
    assert lines[1] == "revenue | 100.00M | 110.00M"
    assert "revenue QoQ | -- | +10.00%" in lines
    assert "net_income QoQ | -- | n/m" in lines


def test_delta_table_five_quarter_cap():
    qs = [_q(i, 100e6 + i) for i in range(6)]
    header = quarterly_delta_table(qs).splitlines()[0].split(" | ")
    assert header[1:] == [q.period_end.isoformat() for q in qs[1:]]
    with pytest.raises(InsufficientQuarters):
        quarterly_delta_table(qs[:1])


def _doc(kind, cleaned="Cleaned body.", title="10-Q"):
    return Document(f"{kind}--x", kind, "AAA Corp", DAY, "raw", cleaned_text=cleaned, relevance="relevant", ticker="AAA", title=title)


def test_filing_and_call_summaries():
    seen = {}

    def grab(stage):
        def f(v):
            seen[stage] = v
            return f"{stage} out"

        return f

    gw = scripted_gateway(table_responder({"filing_summary": grab("filing_summary"), "earnings_call_summary": grab("earnings_call_summary")}))
    rep = filing_summary("AAA", _doc("sec_filing"), gw)
    assert rep.text == "filing_summary out" and rep.agent == "fundamentals"
    assert seen["filing_summary"]["form"] == "10-Q" and seen["filing_summary"]["text"] == "Cleaned body."
    assert earnings_call_summary("AAA", _doc("earnings_call"), gw).text == "earnings_call_summary out"
    with pytest.raises(PreconditionError):
        filing_summary("AAA", _doc("earnings_call"), gw)
    with pytest.raises(PreconditionError):
        filing_summary("AAA", _doc("sec_filing", cleaned=""), gw)
    with pytest.raises(PreconditionError):
        earnings_call_summary("AAA", _doc("sec_filing"), gw)


def test_consolidation_full_and_basic_prompts():
    gw = scripted_gateway(lambda stage, v: f"{stage} view")
    table = quarterly_delta_table([_q(i) for i in range(3)])
    filing = AgentReport("fundamentals", "AAA", DAY, "FILING SUMMARY TEXT")
    call = AgentReport("fundamentals", "AAA", DAY, "CALL SUMMARY TEXT")
    full = fundamentals_consolidation("AAA", DAY, table, filing, call, gw, mode="full")
    basic = fundamentals_consolidation("AAA", DAY, table, filing, call, gw, mode="basic")
    assert full.text != basic.text
    prompts = [e["request"]["messages"][-1]["text"] for e in gw.cassette.entries.values()]
    full_prompt = next(p for p in prompts if "FILING SUMMARY TEXT" in p)
    assert table in full_prompt and "CALL SUMMARY TEXT" in full_prompt
    basic_prompt = next(p for p in prompts if p is not full_prompt)
    assert table in basic_prompt
    assert "FILING SUMMARY TEXT" not in basic_prompt and "CALL SUMMARY TEXT" not in basic_prompt
    with pytest.raises(PreconditionError):
        fundamentals_consolidation("AAA", DAY, "  ", filing, call, gw)


def test_consolidation_prompt_never_exceeds_five_periods():
    qs = [_q(i) for i in range(8)]
    gw = scripted_gateway(lambda s, v: "ok")
    fundamentals_consolidation("AAA", DAY, quarterly_delta_table(qs), None, None, gw, mode="basic")
    prompt = next(iter(gw.cassette.entries.values()))["request"]["messages"][-1]["text"]
    assert sum(q.period_end.isoformat() in prompt for q in qs) == 5


def _series(name, closes, start=dt.date(2023, 1, 2)):
    days, d = [], start
    while len(days) < len(closes):
        if d.weekday() < 5:
            days.append(d)
        d += dt.timedelta(days=1)
    return PriceSeries(name, tuple(days), np.asarray(closes, dtype=float))


def test_dynamics_constant_series():
    s = {"AAA": _series("AAA", [50.0] * 80), "SPX": _series("SPX", [10.0] * 80)}
    row = dynamics_table(s, ["AAA", "SPX"]).splitlines()[1].split(" | ")
    assert row == ["AAA", "0.00%", "0.00%", "0.00%", "0.00%", "n/a", "0.00%"]


def test_dynamics_insufficient_history():
    s = {"AAA": _series("AAA", [50.0] * 30), "SPX": _series("SPX", [10.0] * 80)}
    with pytest.raises(InsufficientHistory):
        dynamics_report("AAA", DAY, s, [], "SPX", scripted_gateway(lambda a, b: "x"))


def test_dynamics_table_matches_metric_oracles():
    rng = np.random.default_rng(0)
    closes = 100 * np.cumprod(1 + rng.normal(0.0005, 0.01, 400))
    s = _series("AAA", closes)
    row = dynamics_table({"AAA": s}, ["AAA"]).splitlines()[1].split(" | ")
    # oracle: trailing windows by index arithmetic, metrics over the last 253 prices
    w = closes[-253:]
    r = w[1:] / w[:-1] - 1
    vol = np.sqrt(np.sum((r - r.mean()) ** 2) / (len(r) - 1)) * np.sqrt(252)
    peak, mdd = w[0], 0.0
    for p in w:
        peak = max(peak, p)
        mdd = max(mdd, (peak - p) / peak)
    want = [
        f"{100 * (closes[-1] / closes[-253] - 1):.2f}%",
        f"{100 * (closes[-1] / closes[-127] - 1):.2f}%",
        f"{100 * (closes[-1] / closes[-64] - 1):.2f}%",
        f"{100 * vol:.2f}%",
        f"{r.mean() / r.std(ddof=1) * np.sqrt(252):.2f}",
        f"{100 * mdd:.2f}%",
    ]
    assert row[1:] == want


def test_dynamics_report_orders_ticker_peers_market():
    rng = np.random.default_rng(1)
    s = {n: _series(n, 100 * np.cumprod(1 + rng.normal(0, 0.01, 100))) for n in ("AAA", "BBB", "SPX")}
    gw = scripted_gateway(table_responder({"dynamics": "narrative"}))
    rep = dynamics_report("AAA", DAY, s, ["BBB", "AAA"], "SPX", gw)
    assert rep.text == "narrative" and rep.agent == "dynamics"
    prompt = next(iter(gw.cassette.entries.values()))["request"]["messages"][-1]["text"]
    assert prompt.index("AAA |") < prompt.index("BBB |") < prompt.index("SPX |")


@pytest.mark.parametrize("text,action", [("Reasoning.\nSIGNAL: BUY", "buy"), ("x\nsignal: sell\n\n", "sell"), ("**SIGNAL: Hold**", "hold")])
def test_parse_signal(text, action):
    assert parse_signal(text) == action


@pytest.mark.parametrize("text", ["Reasoning.\nSIGNAL: maybe", "SIGNAL: BUY\nthen more text", ""])
def test_parse_signal_rejects(text):
    with pytest.raises(UnparseableSignal):
        parse_signal(text)


def _reports():
    return {k: AgentReport(k, "MARKET" if k == "macro" else "AAA", DAY, f"{k} text") for k in ("news", "fundamentals", "dynamics", "macro")}


def test_signal_decision():
    gw = scripted_gateway(table_responder({"signal": "Step 1.\nStep 2.\nSIGNAL: BUY"}))
    sig, rep = signal_decision("AAA", DAY, _reports(), gw)
    assert sig.action == "buy" and sig.explanation == "Step 1.\nStep 2.\nSIGNAL: BUY"
    assert rep.agent == "signal"
    prompt = next(iter(gw.cassette.entries.values()))["request"]["messages"][-1]["text"]
    for k in ("news", "fundamentals", "dynamics", "macro"):
        assert f"{k} text" in prompt
    missing = _reports()
    del missing["macro"]
    with pytest.raises(PreconditionError):
        signal_decision("AAA", DAY, missing, gw)
    bad = scripted_gateway(table_responder({"signal": "SIGNAL: maybe"}))
    with pytest.raises(UnparseableSignal):
        signal_decision("AAA", DAY, _reports(), bad)
