import csv
import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from marketsense.cli import main

import universe as builder
from llmfake import FakeTransport, fixture_model
from conftest import UNIVERSE


def run(universe, *args, run_dir=None, capsys=None, transport=None):
    argv = ["--config", str(universe / "config.toml")]
    if run_dir is not None:
        argv += ["--run-dir", str(run_dir)]
    if transport is not None:
        argv += ["--mode", "record"]
    code = main(argv + list(args), transport=transport)
    out = capsys.readouterr() if capsys else None
    return code, out


def test_ingest_then_rerun_is_idempotent(universe, tmp_path, capsys):
    rd = tmp_path / "run"
    code, out = run(universe, "ingest", run_dir=rd, capsys=capsys)
    assert code == 0
    first = json.loads(out.out)
    assert first["new"] > 0 and first["indexed"] == 10
    assert "irrelevant" in out.err
    code, out = run(universe, "ingest", run_dir=rd, capsys=capsys)
    assert code == 0
    assert json.loads(out.out)["new"] == 0
    assert len((rd / "registry" / "registry.jsonl").read_text().splitlines()) == first["documents"]


def test_default_run_dir_is_derived_from_config(universe, capsys):
    code, _ = run(universe, "ingest", capsys=capsys)
    assert code == 0
    dirs = list((universe / "runs").iterdir())
    assert len(dirs) == 1 and dirs[0].name.endswith("_2024-05-01")


def test_missing_corpus_is_a_usage_error(universe, tmp_path, capsys):
    shutil.rmtree(universe / "corpus")
    code, out = run(universe, "ingest", run_dir=tmp_path / "r", capsys=capsys)
    assert code == 2 and "corpus" in out.err


def test_empty_universe_is_a_usage_error(universe, tmp_path, capsys):
    cfg = universe / "config.toml"
    cfg.write_text(cfg.read_text().replace('tickers = ["AAA", "BBB", "CCC", "DDD", "EEE"]', "tickers = []"))
    code, out = run(universe, "signals", run_dir=tmp_path / "r", capsys=capsys)
    assert code == 2 and "empty" in out.err


def test_missing_config_is_a_usage_error(tmp_path, capsys):
    assert main(["--config", str(tmp_path / "nope.toml"), "ingest"]) == 2


@pytest.fixture
def ingested(universe, tmp_path, capsys):
    rd = tmp_path / "run"
    assert run(universe, "ingest", run_dir=rd, capsys=capsys)[0] == 0
    return universe, rd


def test_analyze_writes_signal_and_reports(ingested, capsys):
    uni, rd = ingested
    code, out = run(uni, "analyze", "--ticker", "AAA", "--as-of", "2024-03-01", run_dir=rd, capsys=capsys)
    assert code == 0
    sig = json.loads(out.out)
    assert sig["action"] in {"buy", "hold", "sell"}
    assert (rd / sig["explanation_path"]).exists()
    names = sorted(p.name for p in (rd / "reports").iterdir())
    for agent in ("news", "fundamentals", "dynamics", "signal"):
        assert f"{agent}_AAA_2024-03-01.json" in names
    assert "macro_MARKET_2024-03-01.json" in names


def test_retrieve_command(ingested, capsys):
    uni, rd = ingested
    args = ("retrieve", "--query", "Where are bond yields heading?", "--as-of", "2024-03-01", "--method", "simple")
    code, out = run(uni, *args, run_dir=rd, capsys=capsys)
    assert code == 1 and "CassetteMiss" in out.err
    code, out = run(uni, *args, run_dir=rd, capsys=capsys, transport=FakeTransport(fixture_model))
    assert code == 0
    ans = json.loads(out.out)
    assert 1 <= len(ans["supporting_chunks"]) <= 5
    assert all("2024-01-31" <= c["publication_date"] <= "2024-03-01" for c in ans["supporting_chunks"])


def test_signals_backtest_factor(ingested, capsys):
    uni, rd = ingested
    code, _ = run(uni, "signals", run_dir=rd, capsys=capsys)
    assert code == 0
    with open(rd / "signals.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    dates = {r["rebalance_date"] for r in rows}
    assert dates == {"2024-02-01", "2024-03-01", "2024-04-01", "2024-05-01"}
    assert all(sum(r["rebalance_date"] == d for r in rows) == 5 for d in dates)

    code, out = run(uni, "backtest", run_dir=rd, capsys=capsys)
    assert code == 0
    assert "MS-Eq" in out.out and "SPX" in out.out
    rep = json.loads((rd / "backtest" / "report_MS-Eq.json").read_text())
    for key in ("total_return_pct_net", "total_return_pct_gross", "volatility_pct", "sharpe", "sortino", "mdd_pct", "win_rate_pct", "total_trades", "alpha_pct_annual", "beta"):
        assert key in rep
    assert rep["total_return_pct_net"] < rep["total_return_pct_gross"]

    code, out = run(uni, "factor", run_dir=rd, capsys=capsys)
    assert code == 0 and "MS-Cap" in out.out and "Fama-French 5-Factor" in out.out
    code, out2 = run(uni, "factor", "--vs-benchmark", run_dir=rd, capsys=capsys)
    assert code == 0 and out2.out != out.out


def test_backtest_without_signals_is_a_usage_error(ingested, capsys):
    uni, rd = ingested
    code, out = run(uni, "backtest", run_dir=rd, capsys=capsys)
    assert code == 2 and "signals" in out.err


def test_rag_eval_and_sentiment_stats(ingested, capsys):
    uni, rd = ingested
    code, out = run(uni, "rag-eval", run_dir=rd, capsys=capsys)
    assert code == 0
    lines = (rd / "rag_eval" / "retrieval_eval.csv").read_text().splitlines()
    assert lines[0] == "Top-n,Method,Recall,Precision,Relevancy,Faithfulness,Overall" and len(lines) == 10
    code, out = run(uni, "sentiment-stats", run_dir=rd, capsys=capsys)
    assert code == 0 and "Sentiment (Full)" in out.out
    stats = json.loads((rd / "sentiment" / "sentiment.json").read_text())
    assert set(stats) >= {"full", "basic", "difference"}


def test_one_bad_ticker_reports_status_and_exit_1(ingested, capsys):
    uni, rd = ingested
    cfg = uni / "config.toml"
    cfg.write_text(cfg.read_text().replace('"EEE"]', '"EEE", "ZZZ"]', 1))
    code, out = run(uni, "signals", "--as-of", "2024-02-01", run_dir=rd, capsys=capsys)
    assert code == 1
    assert "ZZZ@2024-02-01" in out.err and "error" in out.err
    assert "AAA@2024-02-01  ok" in out.err


def test_module_entry_point(universe, tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "marketsense", "--config", str(universe / "config.toml"), "--run-dir", str(tmp_path / "r"), "sentiment-stats"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "Difference" in proc.stdout


def test_fixture_bundle_regenerates_identically(tmp_path):
    dest = builder.build_inputs(tmp_path / "regen")
    builder.record(dest)
    committed = sorted(p.relative_to(UNIVERSE) for p in UNIVERSE.rglob("*") if p.is_file())
    fresh = sorted(p.relative_to(dest) for p in dest.rglob("*") if p.is_file())
    assert fresh == committed
    for rel in committed:
        assert (dest / rel).read_bytes() == (UNIVERSE / rel).read_bytes(), rel
