"""Command-line entry point: ``python -m marketsense <command> --config run.toml``."""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .errors import MarketSenseError, PreconditionError
from .evaluation import evaluate_methods, format_retrieval_table, format_sentiment_table, load_cases, load_paired_scores, sentiment_comparison
from .pipeline import ItemStatus, Workspace, build_gateway
from .retrieval import METHODS, RetrievalRequest, Retriever

EXIT_OK, EXIT_ITEMS, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("marketsense")


def _date(s: str) -> dt.date:
    try:
        return dt.date.fromisoformat(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date: {s!r}") from None


def run_dir_for(cfg: RunConfig, explicit: str | None) -> Path:
    """``--run-dir`` if given, else ``<config dir>/<run root>/<config hash>_<as_of>``."""
    if explicit:
        return Path(explicit)
    dates = list(cfg.rebalance_dates) or [d for d in (cfg.schedule_end,) if d]
    tag = max(dates).isoformat() if dates else "adhoc"
    return cfg.base_dir / cfg.run_root / f"{cfg.digest}_{tag}"


def print_status(items: list[ItemStatus], stream=None) -> None:
    stream = stream or sys.stderr
    if not items:
        return
    w = max(len(i.item) for i in items)
    for i in items:
        stream.write(f"{i.item.ljust(w)}  {i.status:<10} {i.detail}\n".rstrip() + "\n")


def _dump(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False, default=str) + "\n")


def cmd_ingest(ws: Workspace, args) -> int:
    summary = ws.ingest()
    ws.run_dir.mkdir(parents=True, exist_ok=True)
    (ws.run_dir / "ingest_summary.json").write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print_status(summary.items)
    _dump({"new": summary.new, "indexed": summary.indexed, "documents": len(summary.items)})
    return EXIT_ITEMS if any(i.failed for i in summary.items) else EXIT_OK


def cmd_retrieve(ws: Workspace, args) -> int:
    req = RetrievalRequest(args.query, args.as_of, args.method, args.top_n, args.lookback_days or ws.cfg.lookback_days)
    answer = Retriever(ws.index, ws.gateway, ws.prompts).answer(req)
    _dump(answer.to_dict())
    return EXIT_OK


def cmd_analyze(ws: Workspace, args) -> int:
    sig = ws.analyze(args.ticker, args.as_of)
    _dump({"ticker": sig.ticker, "as_of_date": sig.as_of_date.isoformat(), "action": sig.action, "explanation_path": sig.explanation_path})
    return EXIT_OK


def cmd_signals(ws: Workspace, args) -> int:
    if not ws.cfg.tickers:
        raise PreconditionError("the universe is empty")
    sets, status = ws.all_signals([args.as_of] if args.as_of else None)
    print_status(status)
    _dump({"signal_sets": len(sets), "rows": sum(len(s.signals) for s in sets), "path": "signals.csv"})
    return EXIT_ITEMS if any(s.failed for s in status) else EXIT_OK


def cmd_backtest(ws: Workspace, args) -> int:
    if args.cost_bps is not None:
        ws.cfg.cost_bps = args.cost_bps
    reports, status = ws.backtest()
    print_status(status)
    sys.stdout.write((ws.run_dir / "backtest" / "performance.txt").read_text(encoding="utf-8"))
    return EXIT_ITEMS if any(s.failed for s in status) else EXIT_OK


def cmd_factor(ws: Workspace, args) -> int:
    text, payload = ws.factor(vs_benchmark=args.vs_benchmark)
    sys.stdout.write(text)
    errors = [ItemStatus(k, "error", v["error"]) for k, v in payload.items() if "error" in v]
    print_status(errors)
    return EXIT_ITEMS if errors else EXIT_OK


def cmd_rag_eval(ws: Workspace, args) -> int:
    cases = load_cases(args.cases or ws.cfg.require("eval_cases"))
    grid = evaluate_methods(cases, Retriever(ws.index, ws.gateway, ws.prompts), prompts=ws.prompts)
    out = ws.run_dir / "rag_eval"
    out.mkdir(parents=True, exist_ok=True)
    (out / "retrieval_eval.csv").write_text(grid.to_csv(), encoding="utf-8")
    table = format_retrieval_table(grid)
    (out / "retrieval_eval.txt").write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return EXIT_OK


def cmd_sentiment_stats(ws: Workspace, args) -> int:
    full, basic = load_paired_scores(args.pairs or ws.cfg.require("sentiment"))
    cmp = sentiment_comparison(full, basic)
    out = ws.run_dir / "sentiment"
    out.mkdir(parents=True, exist_ok=True)
    (out / "sentiment.json").write_text(json.dumps(cmp.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    table = format_sentiment_table(cmp)
    (out / "sentiment.txt").write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "retrieve": cmd_retrieve,
    "analyze": cmd_analyze,
    "signals": cmd_signals,
    "backtest": cmd_backtest,
    "factor": cmd_factor,
    "rag-eval": cmd_rag_eval,
    "sentiment-stats": cmd_sentiment_stats,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="marketsense", description="LLM-agent stock selection pipeline with backtesting.")
    p.add_argument("--config", required=True, help="run configuration (TOML)")
    p.add_argument("--mode", choices=("live", "record", "replay"), help="gateway mode (overrides the config)")
    p.add_argument("--run-dir", help="output directory (default: derived from config hash and date)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("ingest", help="parse, filter, clean, register and index the corpus")

    r = sub.add_parser("retrieve", help="answer one macro query from the index")
    r.add_argument("--method", choices=METHODS, default="hyde")
    r.add_argument("--query", required=True)
    r.add_argument("--as-of", type=_date, required=True)
    r.add_argument("--top-n", type=int, default=5)
    r.add_argument("--lookback-days", type=int)

    a = sub.add_parser("analyze", help="run all agents for one ticker")
    a.add_argument("--ticker", required=True)
    a.add_argument("--as-of", type=_date, required=True)

    s = sub.add_parser("signals", help="signals for the universe (one date, or the whole schedule)")
    s.add_argument("--as-of", type=_date)

    b = sub.add_parser("backtest", help="simulate the signal portfolios")
    b.add_argument("--cost-bps", type=float)

    f = sub.add_parser("factor", help="factor regressions of the portfolio returns")
    f.add_argument("--vs-benchmark", action="store_true", help="dependent variable = portfolio minus benchmark return (default: minus RF)")

    e = sub.add_parser("rag-eval", help="retrieval method comparison grid")
    e.add_argument("--cases")

    t = sub.add_parser("sentiment-stats", help="full-vs-basic sentiment statistics")
    t.add_argument("--pairs", help="CSV with columns full,basic")
    return p


def main(argv=None, transport=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, {"mode": args.mode})
        ws = Workspace(cfg, run_dir_for(cfg, args.run_dir), gateway=None if transport is None else build_gateway(cfg, transport))
    except PreconditionError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](ws, args)
    except PreconditionError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except MarketSenseError as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return EXIT_ITEMS
    finally:
        ws.save_cassette()


if __name__ == "__main__":
    sys.exit(main())
