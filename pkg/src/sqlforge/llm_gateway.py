"""Chat-completion and embedding access: HTTP backends, a scripted mock, model pools.

Every provider exposes ``complete(ChatRequest) -> ChatResponse`` and
``embed(list[str]) -> list[EmbeddingVector]``.  Pipeline stages accept any
object with those two methods (usually a :class:`Gateway`).
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Sequence

import httpx
import numpy as np

from .errors import (
    AuthError,
    DimensionMismatch,
    PreconditionError,
    ProviderError,
    TransportError,
)

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
TRANSIENT_STATUS = {408, 429, 500, 502, 503, 504}


@dataclass
class ChatRequest:
    messages: list[tuple[str, str]]
    temperature: float = 0.0
    n_samples: int = 1
    max_output_tokens: int = 4096
    model_id: str = "default"

    def validate(self) -> None:
        if not self.messages:
            raise PreconditionError("ChatRequest.messages must be non-empty")
        for role, text in self.messages:
            if role not in ROLES:
                raise PreconditionError(f"unknown role {role!r}")
            if not isinstance(text, str):
                raise PreconditionError("message text must be a string")
        if not 0.0 <= self.temperature <= 2.0:
            raise PreconditionError(f"temperature {self.temperature} outside [0, 2]")
        if self.n_samples < 1:
            raise PreconditionError("n_samples must be >= 1")
        if self.max_output_tokens < 1:
            raise PreconditionError("max_output_tokens must be >= 1")

    def fingerprint(self) -> str:
        payload = json.dumps(
            [self.model_id, [list(m) for m in self.messages], float(self.temperature), self.n_samples],
            ensure_ascii=False,
            separators=(",", ":"),
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    @property
    def prompt(self) -> str:
        """Concatenated text of the user messages."""
        return "\n\n".join(text for role, text in self.messages if role == "user")


@dataclass
class ChatResponse:
    texts: list[str]
    usage: dict[str, int] = field(default_factory=dict)
    provider_meta: dict[str, str] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    model_id: str

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


@dataclass
class ProviderConfig:
    endpoint_url: str = "http://localhost:8000/v1"
    api_key_env: str = "OPENAI_API_KEY"
    max_in_flight: int = 8
    retry_limit: int = 3
    backoff_base_ms: int = 500
    request_timeout_s: float = 300.0
    embedding_model_id: str = "sentence-transformers/all-mpnet-base-v2"
    cache_greedy: bool = True

    def __post_init__(self) -> None:
        if self.max_in_flight < 1:
            raise PreconditionError("max_in_flight must be >= 1")
        if self.retry_limit < 0:
            raise PreconditionError("retry_limit must be >= 0")
        if self.backoff_base_ms < 1:
            raise PreconditionError("backoff_base_ms must be >= 1")


class RequestLog:
    """Append-only request/response log, optionally mirrored to a JSONL file."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.records: list[dict[str, Any]] = []
        self._lock = threading.Lock()

    def append(self, record: dict[str, Any]) -> None:
        with self._lock:
            self.records.append(record)
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record, ensure_ascii=False) + "\n")


class InFlightLimiter:
    """Bounded semaphore that also records the peak number of holders."""

    def __init__(self, limit: int):
        self.limit = limit
        self._sem = threading.BoundedSemaphore(limit)
        self._lock = threading.Lock()
        self.current = 0
        self.peak = 0

    def __enter__(self):
        self._sem.acquire()
        with self._lock:
            self.current += 1
            self.peak = max(self.peak, self.current)
        return self

    def __exit__(self, *exc):
        with self._lock:
            self.current -= 1
        self._sem.release()
        return False


class _BaseProvider:
    """Validation, greedy-request caching, in-flight limiting and logging."""

    source = "base"

    def __init__(self, max_in_flight: int = 8, log: RequestLog | None = None, cache_greedy: bool = True):
        self.limiter = InFlightLimiter(max_in_flight)
        self.log = log if log is not None else RequestLog()
        self.cache_greedy = cache_greedy
        self._cache: dict[str, ChatResponse] = {}
        self._cache_lock = threading.Lock()

    def complete(self, request: ChatRequest, item_key: str | None = None) -> ChatResponse:
        request.validate()
        fp = request.fingerprint()
        cacheable = self.cache_greedy and request.temperature == 0
        if cacheable:
            with self._cache_lock:
                hit = self._cache.get(fp)
            if hit is not None:
                self._log(request, fp, hit, cached=True)
                return hit
        with self.limiter:
            response = self._complete(request, fp)
        if len(response.texts) > request.n_samples:
            response.texts = response.texts[: request.n_samples]
        if cacheable and response.texts:
            with self._cache_lock:
                self._cache[fp] = response
        self._log(request, fp, response, cached=False)
        return response

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        texts = list(texts)
        if not texts:
            raise PreconditionError("embed() needs at least one text")
        if any(not isinstance(t, str) or not t for t in texts):
            raise PreconditionError("embed() texts must be non-empty strings")
        with self.limiter:
            vectors = self._embed(texts)
        if len(vectors) != len(texts):
            raise ProviderError(f"expected {len(texts)} embeddings, got {len(vectors)}")
        if len({len(v.values) for v in vectors}) > 1:
            raise DimensionMismatch("provider returned vectors of differing dimension")
        return vectors

    def _log(self, request: ChatRequest, fp: str, response: ChatResponse, cached: bool) -> None:
        self.log.append(
            {
                "fingerprint": fp,
                "model_id": request.model_id,
                "temperature": request.temperature,
                "n_samples": request.n_samples,
                "messages": [list(m) for m in request.messages],
                "texts": response.texts,
                "failures": response.failures,
                "source": response.provider_meta.get("source", self.source),
                "cached": cached,
            }
        )

    def _complete(self, request: ChatRequest, fp: str) -> ChatResponse:  # pragma: no cover
        raise NotImplementedError

    def _embed(self, texts: list[str]) -> list[EmbeddingVector]:  # pragma: no cover
        raise NotImplementedError


class HttpProvider(_BaseProvider):
    """Client for servers speaking the open chat-completions / embeddings JSON schema."""

    source = "http"

    def __init__(
        self,
        config: ProviderConfig,
        *,
        client: httpx.Client | None = None,
        log: RequestLog | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        super().__init__(config.max_in_flight, log, config.cache_greedy)
        self.config = config
        self.client = client or httpx.Client(timeout=config.request_timeout_s)
        self.sleep = sleep
        self.attempts = 0

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key_env:
            key = os.environ.get(self.config.api_key_env)
            if not key:
                raise AuthError(f"environment variable {self.config.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        url = self.config.endpoint_url.rstrip("/") + path
        headers = self._headers()
        last = "no attempt made"
        for attempt in range(self.config.retry_limit + 1):
            if attempt:
                self.sleep(self.config.backoff_base_ms * 2 ** (attempt - 1) / 1000.0)
            self.attempts += 1
            try:
                resp = self.client.post(url, json=payload, headers=headers)
            except (httpx.TimeoutException, httpx.TransportError) as exc:
                last = f"{type(exc).__name__}: {exc}"
                logger.warning("transient failure on %s (attempt %d): %s", url, attempt + 1, last)
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"{resp.status_code} from {url}")
            if resp.status_code in TRANSIENT_STATUS or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                logger.warning("transient failure on %s (attempt %d): %s", url, attempt + 1, last)
                continue
            if resp.status_code >= 400:
                raise ProviderError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
            try:
                body = resp.json()
            except ValueError as exc:
                raise ProviderError(f"non-JSON response body from {url}") from exc
            if not isinstance(body, dict):
                raise ProviderError(f"unexpected response body type from {url}")
            return body
        raise TransportError(f"{url}: retries exhausted ({last})")

    def _complete(self, request: ChatRequest, fp: str) -> ChatResponse:
        payload = {
            "model": request.model_id,
            "messages": [{"role": r, "content": t} for r, t in request.messages],
            "temperature": request.temperature,
            "n": request.n_samples,
            "max_tokens": request.max_output_tokens,
        }
        body = self._post("/chat/completions", payload)
        choices = body.get("choices")
        if not isinstance(choices, list):
            raise ProviderError("response has no 'choices' list")
        texts, failures = [], []
        for i, choice in enumerate(choices):
            try:
                content = choice["message"]["content"]
            except (KeyError, TypeError):
                content = None
            if isinstance(content, str):
                texts.append(content)
            else:
                failures.append(f"choice {i}: missing content")
        for i in range(len(choices), request.n_samples):
            failures.append(f"choice {i}: not returned")
        usage = {k: int(v) for k, v in (body.get("usage") or {}).items() if isinstance(v, (int, float))}
        return ChatResponse(texts, usage, {"source": "http", "id": str(body.get("id", ""))}, failures)

    def _embed(self, texts: list[str]) -> list[EmbeddingVector]:
        body = self._post("/embeddings", {"model": self.config.embedding_model_id, "input": texts})
        data = body.get("data")
        if not isinstance(data, list):
            raise ProviderError("embedding response has no 'data' list")
        try:
            data = sorted(data, key=lambda d: d.get("index", 0))
            return [
                EmbeddingVector(tuple(float(x) for x in d["embedding"]), self.config.embedding_model_id)
                for d in data
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProviderError("malformed embedding entry") from exc


def hashing_embedding(text: str, dim: int = 64) -> tuple[float, ...]:
    """Deterministic bag-of-words + character-trigram feature hashing, L2-normalised."""
    vec = np.zeros(dim)
    lowered = text.lower()
    words = re.findall(r"\w+", lowered)
    grams = [lowered[i : i + 3] for i in range(max(len(lowered) - 2, 0))]
    for tok, weight in [(w, 1.0) for w in words] + [(g, 0.5) for g in grams]:
        h = hashlib.blake2b(tok.encode("utf-8"), digest_size=8).digest()
        idx = int.from_bytes(h[:4], "little") % dim
        sign = 1.0 if h[4] & 1 else -1.0
        vec[idx] += sign * weight
    norm = np.linalg.norm(vec)
    if norm == 0:
        h = hashlib.blake2b(text.encode("utf-8"), digest_size=4).digest()
        vec[int.from_bytes(h, "little") % dim] = 1.0
        norm = 1.0
    return tuple(float(x) for x in vec / norm)


class MockProvider(_BaseProvider):
    """Deterministic offline provider.

    Completion lookup order: ``script[fingerprint]``, ``script["*"]``,
    ``responder(request)``, then a fallback marker text (recorded in
    ``unscripted``).  Embeddings come from ``embeddings[text]``, then
    ``embedder(text)``, then :func:`hashing_embedding`.
    """

    source = "mock"

    def __init__(
        self,
        script: dict[str, list[str]] | None = None,
        *,
        embeddings: dict[str, Sequence[float]] | None = None,
        responder: Callable[[ChatRequest], list[str]] | None = None,
        embedder: Callable[[str], Sequence[float]] | None = None,
        delay: float = 0.0,
        max_in_flight: int = 64,
        log: RequestLog | None = None,
        embedding_dim: int = 64,
        model_id: str = "mock-embedder",
    ):
        super().__init__(max_in_flight, log, cache_greedy=True)
        self.script = dict(script or {})
        self.embeddings = {k: tuple(float(x) for x in v) for k, v in (embeddings or {}).items()}
        self.responder = responder
        self.embedder = embedder
        self.delay = delay
        self.embedding_dim = embedding_dim
        self.model_id = model_id
        self.unscripted: list[str] = []
        self.requests: list[ChatRequest] = []
        self._req_lock = threading.Lock()

    def _complete(self, request: ChatRequest, fp: str) -> ChatResponse:
        with self._req_lock:
            self.requests.append(request)
        if self.delay:
            time.sleep(self.delay)
        if fp in self.script:
            texts, source = list(self.script[fp]), "script"
        elif "*" in self.script:
            texts, source = list(self.script["*"]), "script"
        elif self.responder is not None:
            texts, source = list(self.responder(request)), "responder"
        else:
            with self._req_lock:
                self.unscripted.append(fp)
            logger.info("unscripted mock request %s", fp[:12])
            texts, source = [f"<<mock:unscripted:{fp[:12]}>>"] * request.n_samples, "fallback"
        texts = texts[: request.n_samples]
        return ChatResponse(texts, {"completion_tokens": sum(len(t.split()) for t in texts)}, {"source": source})

    def _embed(self, texts: list[str]) -> list[EmbeddingVector]:
        out = []
        for t in texts:
            if t in self.embeddings:
                values = self.embeddings[t]
            elif self.embedder is not None:
                values = tuple(float(x) for x in self.embedder(t))
            else:
                values = hashing_embedding(t, self.embedding_dim)
            out.append(EmbeddingVector(values, self.model_id))
        return out


@dataclass(frozen=True)
class PoolEntry:
    model_id: str
    weight: float
    provider: Any = None


class ModelPool:
    """Weighted model assignment, reproducible per item key."""

    def __init__(self, entries: Sequence[PoolEntry]):
        if not entries:
            raise PreconditionError("model pool must have at least one entry")
        total = sum(e.weight for e in entries)
        if abs(total - 1.0) > 1e-6 or any(e.weight < 0 for e in entries):
            raise PreconditionError(f"pool weights must be non-negative and sum to 1 (got {total})")
        self.entries = list(entries)
        self._cum = np.cumsum([e.weight for e in entries])

    @classmethod
    def uniform(cls, model_ids: Sequence[str], provider: Any = None) -> "ModelPool":
        w = 1.0 / len(model_ids)
        return cls([PoolEntry(m, w, provider) for m in model_ids])

    def pick(self, key: str) -> PoolEntry:
        h = hashlib.sha256(key.encode("utf-8")).digest()
        u = int.from_bytes(h[:8], "big") / 2**64
        idx = int(np.searchsorted(self._cum, u, side="right"))
        return self.entries[min(idx, len(self.entries) - 1)]


class Gateway:
    """What the pipeline stages talk to: routes requests through a model pool."""

    def __init__(self, provider, *, pool: ModelPool | None = None, embedder=None):
        self.provider = provider
        self.pool = pool
        self.embedder = embedder or provider

    def complete(self, request: ChatRequest, item_key: str | None = None) -> ChatResponse:
        provider = self.provider
        if self.pool is not None and item_key is not None:
            entry = self.pool.pick(item_key)
            request = replace(request, model_id=entry.model_id)
            provider = entry.provider or provider
        return provider.complete(request)

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        return self.embedder.embed(texts)


_installed_mock: MockProvider | None = None
_http_providers: dict[str, HttpProvider] = {}
_registry_lock = threading.Lock()


def install_mock(script: dict[str, list[str]] | None = None, **kwargs) -> MockProvider:
    """Route module-level ``complete``/``embed`` calls to a new mock; last install wins."""
    global _installed_mock
    mock = MockProvider(script, **kwargs)
    with _registry_lock:
        _installed_mock = mock
    return mock


def uninstall_mock() -> None:
    global _installed_mock
    with _registry_lock:
        _installed_mock = None


def resolve_provider(config: ProviderConfig | None):
    with _registry_lock:
        if _installed_mock is not None:
            return _installed_mock
        if config is None:
            raise PreconditionError("no mock installed and no provider config given")
        key = json.dumps(asdict(config), sort_keys=True)
        if key not in _http_providers:
            _http_providers[key] = HttpProvider(config)
        return _http_providers[key]


def complete(request: ChatRequest, config: ProviderConfig | None = None) -> ChatResponse:
    return resolve_provider(config).complete(request)


def embed(texts: Sequence[str], config: ProviderConfig | None = None) -> list[EmbeddingVector]:
    return resolve_provider(config).embed(texts)
