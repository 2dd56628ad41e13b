"""
Run configuration (TOML).

Relative paths are resolved against the directory holding the config file.
A minimal file::

    [paths]
    corpus = "corpus"
    prices = "prices.csv"
    cassette = "cassette.json"

    [universe]
    tickers = ["AAA", "BBB"]
    benchmark = "SPX"

    [schedule]
    rebalance_dates = ["2024-01-02", "2024-02-01"]
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import PreconditionError

PATH_KEYS = (
    "corpus", "registry", "index", "prices", "factors", "news", "fundamentals",
    "cassette", "signals", "eval_cases", "sentiment", "templates",
)
# input files that must exist when named
INPUT_KEYS = ("corpus", "prices", "factors", "news", "fundamentals", "signals", "eval_cases", "sentiment", "templates")


@dataclass
class RunConfig:
    base_dir: Path
    paths: dict[str, Path] = field(default_factory=dict)
    tickers: list[str] = field(default_factory=list)
    peers: dict[str, list[str]] = field(default_factory=dict)
    benchmark: str = "SPX"
    rebalance_dates: list[dt.date] = field(default_factory=list)
    schedule_start: dt.date | None = None
    schedule_end: dt.date | None = None
    mode: str = "replay"
    embedder: str = "mock"
    embed_dim: int = 64
    embed_seed: int = 0
    weighting: str = "equal"
    cost_bps: float = 10.0
    initial_capital: float = 10_000.0
    rf_daily: float = 0.0
    lookback_days: int = 30
    top_n: int = 5
    news_lookback_days: int = 30
    fundamentals_mode: str = "full"
    token_budget: int = 8000
    run_root: str = "runs"
    ingest_timestamp: str | None = None
    raw: dict = field(default_factory=dict)

    def path(self, key: str) -> Path | None:
        return self.paths.get(key)

    def require(self, key: str) -> Path:
        p = self.paths.get(key)
        if p is None:
            raise PreconditionError(f"config has no paths.{key}")
        return p

    @property
    def digest(self) -> str:
        """Short hash of the effective configuration (paths relative to the config dir)."""
        d = asdict(self)
        d.pop("base_dir")
        d.pop("raw")
        d["paths"] = {k: _rel(v, self.base_dir) for k, v in sorted(self.paths.items())}
        blob = json.dumps(d, sort_keys=True, default=str, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]

    def validate(self) -> "RunConfig":
        if self.mode not in ("live", "record", "replay"):
            raise PreconditionError(f"unknown gateway mode {self.mode!r}")
        if self.mode in ("record", "replay") and self.path("cassette") is None:
            raise PreconditionError(f"{self.mode} mode needs paths.cassette")
        if self.mode == "replay" and self.path("cassette") is not None and not self.paths["cassette"].exists():
            raise PreconditionError(f"cassette {self.paths['cassette']} does not exist")
        if self.embedder not in ("mock", "gateway"):
            raise PreconditionError("gateway.embedder must be 'mock' or 'gateway'")
        if self.weighting not in ("equal", "cap"):
            raise PreconditionError("portfolio.weighting must be 'equal' or 'cap'")
        if self.fundamentals_mode not in ("full", "basic"):
            raise PreconditionError("agents.fundamentals_mode must be 'full' or 'basic'")
        for key in INPUT_KEYS:
            p = self.paths.get(key)
            if p is not None and not p.exists():
                raise PreconditionError(f"paths.{key} = {p} does not exist")
        if len(set(self.tickers)) != len(self.tickers):
            raise PreconditionError("universe.tickers has duplicates")
        return self


def _rel(p: Path, base: Path) -> str:
    try:
        return p.relative_to(base).as_posix()
    except ValueError:
        return p.as_posix()


def _date(v) -> dt.date:
    return v if isinstance(v, dt.date) else dt.date.fromisoformat(str(v))


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise PreconditionError(f"cannot read config {path}: {exc}") from exc
    return from_dict(raw, path.resolve().parent, overrides)


def from_dict(raw: dict, base_dir: Path, overrides: dict | None = None) -> RunConfig:
    base_dir = Path(base_dir)
    paths = {}
    for k, v in raw.get("paths", {}).items():
        if k not in PATH_KEYS:
            raise PreconditionError(f"unknown path key paths.{k}")
        p = Path(v)
        paths[k] = p if p.is_absolute() else (base_dir / p)
    uni = raw.get("universe", {})
    sched = raw.get("schedule", {})
    gw = raw.get("gateway", {})
    pf = raw.get("portfolio", {})
    rt = raw.get("retrieval", {})
    ag = raw.get("agents", {})
    run = raw.get("run", {})
    cfg = RunConfig(
        base_dir=base_dir,
        paths=paths,
        tickers=[t.upper() for t in uni.get("tickers", [])],
        peers={k.upper(): [p.upper() for p in v] for k, v in uni.get("peers", {}).items()},
        benchmark=uni.get("benchmark", "SPX"),
        rebalance_dates=sorted(_date(d) for d in sched.get("rebalance_dates", [])),
        schedule_start=_date(sched["start"]) if "start" in sched else None,
        schedule_end=_date(sched["end"]) if "end" in sched else None,
        mode=gw.get("mode", "replay"),
        embedder=gw.get("embedder", "mock"),
        embed_dim=int(gw.get("embed_dim", 64)),
        embed_seed=int(gw.get("embed_seed", 0)),
        weighting=pf.get("weighting", "equal"),
        cost_bps=float(pf.get("cost_bps", 10.0)),
        initial_capital=float(pf.get("initial_capital", 10_000.0)),
        rf_daily=float(pf.get("rf_daily", 0.0)),
        lookback_days=int(rt.get("lookback_days", 30)),
        top_n=int(rt.get("top_n", 5)),
        news_lookback_days=int(ag.get("news_lookback_days", 30)),
        fundamentals_mode=ag.get("fundamentals_mode", "full"),
        token_budget=int(ag.get("token_budget", 8000)),
        run_root=run.get("root", "runs"),
        ingest_timestamp=run.get("ingest_timestamp"),
        raw=raw,
    )
    for k, v in (overrides or {}).items():
        if v is not None:
            setattr(cfg, k, v)
    return cfg.validate()
