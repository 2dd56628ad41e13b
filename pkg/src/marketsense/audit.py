"""
Anti-lookahead instrumentation.

Data stores call :func:`note` whenever they hand out a dated artifact. When an
:class:`AccessAudit` is active, each access is compared with the audit's
current clock (set by the pipeline via :meth:`AccessAudit.clock`); anything
dated after the clock is a violation. With no active audit, :func:`note` is a
no-op.
"""

from __future__ import annotations

import contextlib
import contextvars
import datetime as dt
import threading
from dataclasses import dataclass

from .errors import LookaheadViolation

_active: contextvars.ContextVar["AccessAudit | None"] = contextvars.ContextVar("marketsense_audit", default=None)
_clock: contextvars.ContextVar["dt.date | None"] = contextvars.ContextVar("marketsense_clock", default=None)


@dataclass(frozen=True)
class Access:
    kind: str
    key: str
    data_date: dt.date
    as_of: dt.date | None

    @property
    def violates(self) -> bool:
        return self.as_of is not None and self.data_date > self.as_of


class AccessAudit:
    def __init__(self, strict: bool = False):
        self.strict = strict
        self.accesses: list[Access] = []
        self._lock = threading.Lock()

    @property
    def violations(self) -> list[Access]:
        return [a for a in self.accesses if a.violates]

    @property
    def unclocked(self) -> list[Access]:
        return [a for a in self.accesses if a.as_of is None]

    def record(self, kind: str, key: str, data_date: dt.date) -> None:
        acc = Access(kind, key, data_date, _clock.get())
        with self._lock:
            self.accesses.append(acc)
        if self.strict and acc.violates:
            raise LookaheadViolation(f"{kind} {key} dated {data_date} read at as_of {acc.as_of}")

    @contextlib.contextmanager
    def activate(self):
        token = _active.set(self)
        try:
            yield self
        finally:
            _active.reset(token)


@contextlib.contextmanager
def clock(as_of: dt.date):
    """Declare the information date for everything read inside the block."""
    token = _clock.set(as_of)
    try:
        yield
    finally:
        _clock.reset(token)


def note(kind: str, key: str, data_date: dt.date) -> None:
    audit = _active.get()
    if audit is not None:
        audit.record(kind, key, data_date)
