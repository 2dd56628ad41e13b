"""Dated agent outputs and their on-disk JSON form."""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import PreconditionError

AGENTS = ("news", "fundamentals", "dynamics", "macro", "signal")


@dataclass(frozen=True)
class AgentReport:
    agent: str
    ticker: str
    as_of_date: dt.date
    text: str
    input_fingerprints: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.agent not in AGENTS:
            raise PreconditionError(f"unknown agent {self.agent!r}")
        if not self.text.strip():
            raise PreconditionError(f"{self.agent} report for {self.ticker} is empty")
        object.__setattr__(self, "input_fingerprints", tuple(self.input_fingerprints))

    def to_dict(self) -> dict:
        return {
            "agent": self.agent,
            "ticker": self.ticker,
            "as_of_date": self.as_of_date.isoformat(),
            "text": self.text,
            "input_fingerprints": list(self.input_fingerprints),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AgentReport":
        return cls(d["agent"], d["ticker"], dt.date.fromisoformat(d["as_of_date"]), d["text"], tuple(d["input_fingerprints"]))

    def filename(self) -> str:
        return f"{self.agent}_{self.ticker}_{self.as_of_date.isoformat()}.json"

    def save(self, directory: str | Path) -> Path:
        p = Path(directory) / self.filename()
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8")
        return p

    @classmethod
    def load(cls, path: str | Path) -> "AgentReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
