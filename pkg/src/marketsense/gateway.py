"""
Model gateway.

Every chat completion and embedding request in the package goes through a
:class:`Gateway`. The gateway runs in one of three modes:

``live``
    requests hit an HTTP chat-completions style endpoint.
``record``
    like ``live`` but every response is written to a :class:`Cassette`;
    requests already in the cassette are served from it.
``replay``
    responses come from the cassette only. An unrecorded request raises
    :class:`~marketsense.errors.CassetteMiss`; the transport is never touched.

Cassette entries are keyed by a canonical request hash (see
:func:`fingerprint`), so the order in which pipeline stages issue requests
does not matter.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import CassetteMiss, GatewayError, NetworkError, PreconditionError, ProviderRefusal

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
MODES = ("live", "record", "replay")
CASSETTE_FORMAT = 1


@dataclass(frozen=True)
class Message:
    role: str
    text: str


@dataclass(frozen=True)
class CompletionRequest:
    messages: tuple[Message, ...]
    model_id: str = "default"
    temperature: float = 0.0
    max_output_tokens: int = 2048
    request_tag: str = ""

    def __post_init__(self):
        msgs = tuple(m if isinstance(m, Message) else Message(*m) for m in self.messages)
        object.__setattr__(self, "messages", msgs)
        object.__setattr__(self, "temperature", float(self.temperature))
        if not msgs:
            raise PreconditionError("messages must be non-empty")
        for m in msgs:
            if m.role not in ROLES:
                raise PreconditionError(f"unknown role {m.role!r}")
        if msgs[0].role not in ("system", "user"):
            raise PreconditionError("first message must be system or user")
        if self.temperature < 0 or not math.isfinite(self.temperature):
            raise PreconditionError("temperature must be a finite value >= 0")
        if int(self.max_output_tokens) < 1:
            raise PreconditionError("max_output_tokens must be positive")

    def to_dict(self) -> dict:
        return {
            "kind": "completion",
            "model_id": self.model_id,
            "messages": [{"role": m.role, "text": m.text} for m in self.messages],
            "temperature": self.temperature,
            "max_output_tokens": int(self.max_output_tokens),
            "request_tag": self.request_tag,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CompletionRequest":
        return cls(
            messages=tuple(Message(m["role"], m["text"]) for m in d["messages"]),
            model_id=d["model_id"],
            temperature=d["temperature"],
            max_output_tokens=d["max_output_tokens"],
            request_tag=d.get("request_tag", ""),
        )


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    provider_id: str = ""

    @property
    def token_usage(self) -> tuple[int, int]:
        return (self.prompt_tokens, self.completion_tokens)

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "provider_id": self.provider_id,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CompletionResponse":
        return cls(d["text"], int(d.get("prompt_tokens", 0)), int(d.get("completion_tokens", 0)), d.get("provider_id", ""))


@dataclass(frozen=True)
class EmbeddingRequest:
    texts: tuple[str, ...]
    model_id: str = "default"

    def __post_init__(self):
        object.__setattr__(self, "texts", tuple(self.texts))
        if not self.texts:
            raise PreconditionError("embedding request needs at least one text")

    def to_dict(self) -> dict:
        return {"kind": "embedding", "model_id": self.model_id, "texts": list(self.texts)}


def _canonical(obj: Any) -> Any:
    if isinstance(obj, Mapping):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, int):
        return obj
    if isinstance(obj, float):
        return float(obj)
    raise TypeError(f"cannot canonicalize {type(obj).__name__}")


def fingerprint(req) -> str:
    """Stable hex digest of a request.

    Accepts a request object or its serialized dict form; key order in the
    dict does not affect the result. Temperatures are compared as floats, so
    ``0`` and ``0.0`` hash identically.
    """
    if isinstance(req, (CompletionRequest, EmbeddingRequest)):
        payload = req.to_dict()
    else:
        payload = dict(req)
        if "temperature" in payload:
            payload["temperature"] = float(payload["temperature"])
    blob = json.dumps(_canonical(payload), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class Cassette:
    """Fingerprint-keyed store of recorded responses, persisted as one JSON file."""

    def __init__(self, entries: Mapping[str, dict] | None = None, path: str | os.PathLike | None = None):
        self.entries: dict[str, dict] = dict(entries or {})
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self.dirty = False

    @classmethod
    def load(cls, path) -> "Cassette":
        path = Path(path)
        if not path.exists():
            return cls(path=path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise GatewayError(f"unreadable cassette {path}: {exc}") from exc
        if doc.get("format") != CASSETTE_FORMAT:
            raise GatewayError(f"cassette {path} has unsupported format {doc.get('format')!r}")
        return cls({e["fingerprint"]: e for e in doc["entries"]}, path=path)

    def __contains__(self, fp: str) -> bool:
        return fp in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, fp: str) -> dict:
        try:
            return self.entries[fp]["response"]
        except KeyError:
            raise CassetteMiss(f"no recorded response for fingerprint {fp[:16]}...") from None

    def put(self, fp: str, request: dict, response: dict) -> None:
        with self._lock:
            self.entries[fp] = {"fingerprint": fp, "request": request, "response": response}
            self.dirty = True

    def to_json(self) -> str:
        with self._lock:
            entries = [self.entries[k] for k in sorted(self.entries)]
        doc = {"format": CASSETTE_FORMAT, "entries": entries}
        return json.dumps(doc, indent=1, ensure_ascii=False, sort_keys=True) + "\n"

    def save(self, path=None) -> Path:
        target = Path(path) if path is not None else self.path
        if target is None:
            raise GatewayError("cassette has no path to save to")
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = target.with_suffix(target.suffix + ".tmp")
        tmp.write_text(self.to_json(), encoding="utf-8")
        os.replace(tmp, target)
        self.dirty = False
        return target


class HttpTransport:
    """Minimal JSON-over-HTTP POST transport built on urllib."""

    def __init__(self, timeout: float = 120.0):
        self.timeout = timeout

    def post_json(self, url: str, payload: dict, headers: Mapping[str, str]) -> dict:
        data = json.dumps(payload).encode("utf-8")
        req = urllib.request.Request(url, data=data, method="POST", headers={"Content-Type": "application/json", **headers})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            if exc.code == 429 or exc.code >= 500:
                raise NetworkError(f"HTTP {exc.code} from {url}") from exc
            raise GatewayError(f"HTTP {exc.code} from {url}: {exc.read()[:500]!r}") from exc
        except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
            raise NetworkError(f"request to {url} failed: {exc}") from exc


class MockEmbedder:
    """Deterministic unit vectors derived from a seeded hash of the text.

    ``overrides`` maps exact texts to planted vectors (normalized on entry),
    which lets tests construct a specific similarity geometry.
    """

    def __init__(self, dim: int = 128, seed: int = 0, overrides: Mapping[str, Sequence[float]] | None = None):
        if dim < 1:
            raise PreconditionError("dimension must be positive")
        self.dim = dim
        self.seed = seed
        self.overrides: dict[str, np.ndarray] = {}
        for text, vec in (overrides or {}).items():
            self.plant(text, vec)

    def plant(self, text: str, vector: Sequence[float]) -> None:
        v = np.asarray(vector, dtype=np.float64)
        if v.shape != (self.dim,):
            raise PreconditionError(f"planted vector must have dimension {self.dim}")
        n = np.linalg.norm(v)
        if not np.isfinite(n) or n == 0:
            raise PreconditionError("planted vector must be finite and non-zero")
        self.overrides[text] = v / n

    def vector(self, text: str) -> np.ndarray:
        if text in self.overrides:
            return self.overrides[text].copy()
        digest = hashlib.sha256(f"{self.seed}\x00{text}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        v = rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        return np.vstack([self.vector(t) for t in texts])


@dataclass
class CallRecord:
    kind: str
    tag: str
    fingerprint: str


class Gateway:
    """Thread-safe boundary for model inference and embeddings.

    Parameters
    ----------
    mode : {"live", "record", "replay"}
    cassette : Cassette, optional
        Required for ``record`` and ``replay``.
    transport : object with ``post_json(url, payload, headers)``
        Defaults to :class:`HttpTransport`. Tests swap in scripted fakes.
    embedder : MockEmbedder or None
        When given, embeddings are computed locally in every mode. When
        ``None`` embeddings go through the transport/cassette like completions.
    """

    def __init__(
        self,
        mode: str = "replay",
        cassette: Cassette | None = None,
        transport=None,
        endpoint: str = "",
        model_id: str = "default",
        api_key: str = "",
        embed_endpoint: str = "",
        embed_model_id: str = "default",
        embedder: MockEmbedder | None = None,
        max_attempts: int = 3,
        backoff: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if mode not in MODES:
            raise PreconditionError(f"mode must be one of {MODES}")
        if mode in ("record", "replay") and cassette is None:
            raise PreconditionError(f"{mode} mode needs a cassette")
        self.mode = mode
        self.cassette = cassette
        self.transport = transport
        self.endpoint = endpoint
        self.model_id = model_id
        self.api_key = api_key
        self.embed_endpoint = embed_endpoint
        self.embed_model_id = embed_model_id
        self.embedder = embedder
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._sleep = sleep
        self._log_lock = threading.Lock()
        self.calls: list[CallRecord] = []

    @classmethod
    def from_env(cls, mode: str, cassette: Cassette | None = None, embedder: MockEmbedder | None = None, **kw) -> "Gateway":
        """Build a gateway with endpoint settings from ``GW_*`` environment variables."""
        env = os.environ
        endpoint = env.get("GW_ENDPOINT", "")
        if mode in ("live", "record") and not endpoint and kw.get("transport") is None:
            raise PreconditionError("GW_ENDPOINT must be set for live or record mode")
        return cls(
            mode=mode,
            cassette=cassette,
            endpoint=endpoint,
            model_id=env.get("GW_MODEL", kw.pop("model_id", "default")),
            api_key=env.get("GW_API_KEY", ""),
            embed_endpoint=env.get("GW_EMBED_ENDPOINT", ""),
            embed_model_id=env.get("GW_EMBED_MODEL", kw.pop("embed_model_id", "default")),
            embedder=embedder,
            **kw,
        )

    @property
    def dimension(self) -> int | None:
        return self.embedder.dim if self.embedder is not None else None

    # -- public API -----------------------------------------------------

    def chat(self, user: str, system: str | None = None, tag: str = "", max_output_tokens: int = 2048) -> str:
        """Convenience wrapper: build a request with this gateway's model and return the text."""
        messages = []
        if system:
            messages.append(Message("system", system))
        messages.append(Message("user", user))
        req = CompletionRequest(tuple(messages), model_id=self.model_id, max_output_tokens=max_output_tokens, request_tag=tag)
        return self.complete(req).text

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        fp = fingerprint(req)
        self._note("completion", req.request_tag, fp)
        if self.mode == "replay" or (self.mode == "record" and fp in self.cassette):
            resp = CompletionResponse.from_dict(self.cassette.get(fp))
        else:
            resp = self._with_retries(lambda: self._live_complete(req))
            if self.mode == "record":
                self.cassette.put(fp, req.to_dict(), resp.to_dict())
        return resp

    def embed(self, texts: Iterable[str]) -> np.ndarray:
        """Return an ``(n, d)`` array with one unit-or-raw vector per text."""
        texts = list(texts)
        req = EmbeddingRequest(tuple(texts), model_id=self.embed_model_id)
        if self.embedder is not None:
            return self.embedder.embed(texts)
        fp = fingerprint(req)
        self._note("embedding", "", fp)
        if self.mode == "replay" or (self.mode == "record" and fp in self.cassette):
            vectors = self.cassette.get(fp)["vectors"]
        else:
            vectors = self._with_retries(lambda: self._live_embed(req))
            if self.mode == "record":
                self.cassette.put(fp, req.to_dict(), {"vectors": vectors})
        arr = np.asarray(vectors, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != len(texts):
            raise GatewayError("embedding response has the wrong shape")
        if not np.all(np.isfinite(arr)):
            raise GatewayError("embedding response contains non-finite values")
        return arr

    def count(self, kind: str | None = None, tag: str | None = None) -> int:
        with self._log_lock:
            return sum(1 for c in self.calls if (kind is None or c.kind == kind) and (tag is None or c.tag == tag))

    # -- internals ------------------------------------------------------

    def _note(self, kind: str, tag: str, fp: str) -> None:
        with self._log_lock:
            self.calls.append(CallRecord(kind, tag, fp))

    def _transport(self):
        if self.transport is None:
            self.transport = HttpTransport()
        return self.transport

    def _headers(self) -> dict:
        return {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}

    def _with_retries(self, fn):
        delay = self.backoff
        for attempt in range(1, self.max_attempts + 1):
            try:
                return fn()
            except NetworkError as exc:
                if attempt == self.max_attempts:
                    raise
                logger.warning("transient gateway failure (attempt %d/%d): %s", attempt, self.max_attempts, exc)
                self._sleep(delay)
                delay *= 2

    def _live_complete(self, req: CompletionRequest) -> CompletionResponse:
        payload = {
            "model": req.model_id,
            "messages": [{"role": m.role, "content": m.text} for m in req.messages],
            "temperature": req.temperature,
            "max_tokens": int(req.max_output_tokens),
        }
        doc = self._transport().post_json(self.endpoint, payload, self._headers())
        try:
            choice = doc["choices"][0]
            message = choice.get("message", {})
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed completion response: {str(doc)[:200]}") from exc
        if message.get("refusal") or choice.get("finish_reason") == "content_filter":
            raise ProviderRefusal(message.get("refusal") or "provider refused the request")
        usage = doc.get("usage") or {}
        return CompletionResponse(
            text=message.get("content") or "",
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
            provider_id=str(doc.get("model", req.model_id)),
        )

    def _live_embed(self, req: EmbeddingRequest) -> list[list[float]]:
        url = self.embed_endpoint or self.endpoint
        doc = self._transport().post_json(url, {"model": req.model_id, "input": list(req.texts)}, self._headers())
        try:
            rows = sorted(doc["data"], key=lambda r: r.get("index", 0))
            return [list(map(float, r["embedding"])) for r in rows]
        except (KeyError, TypeError, ValueError) as exc:
            raise GatewayError("malformed embedding response") from exc
