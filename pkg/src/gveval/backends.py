"""Judge-model backends.

Two implementations share the :class:`Backend` protocol: an OpenAI-compatible
chat-completions client (images as data URLs, top-k token log-probabilities)
and a fixture-driven mock used for offline runs and tests.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol

import httpx

from gveval.errors import (
    AuthError,
    FixtureParseError,
    MalformedBackendReply,
    RateLimitedExhausted,
    TransportError,
    UnknownRequest,
)
from gveval.model import TokenRecord

logger = logging.getLogger(__name__)

# OpenAI caps top_logprobs at 20.
MAX_TOP_LOGPROBS = 20


@dataclass(frozen=True)
class BackendRequest:
    model_id: str
    prompt_text: str
    attachments: tuple[bytes, ...] = ()
    temperature: float = 0.0
    top_k_logprobs: int = 20
    max_output_tokens: int = 1024

    def __post_init__(self) -> None:
        if self.top_k_logprobs < 0:
            raise ValueError("top_k_logprobs must be >= 0")
        if len(self.attachments) > 1:
            raise ValueError("at most one attachment per request")
        object.__setattr__(self, "attachments", tuple(self.attachments))


@dataclass(frozen=True)
class BackendResponse:
    text: str
    tokens: tuple[TokenRecord, ...]
    usage: tuple[int, int] = (0, 0)
    backend_meta: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "usage", tuple(int(u) for u in self.usage))
        joined = "".join(t.text for t in self.tokens)
        if joined != self.text:
            raise MalformedBackendReply("token texts do not concatenate to the completion text")


def request_digest(request: BackendRequest) -> str:
    """sha256 over model id, prompt bytes, attachment digests, temperature and top-k."""
    payload = {
        "model_id": request.model_id,
        "prompt_sha256": hashlib.sha256(request.prompt_text.encode("utf-8")).hexdigest(),
        "attachments": [hashlib.sha256(a).hexdigest() for a in request.attachments],
        "temperature": repr(float(request.temperature)),
        "top_k_logprobs": request.top_k_logprobs,
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class Backend(Protocol):
    def complete(self, request: BackendRequest) -> BackendResponse: ...


# -- serialization shared by cache blobs and fixtures -------------------------


def response_to_body(response: BackendResponse) -> dict[str, Any]:
    return {
        "text": response.text,
        "tokens": [
            {
                "text": t.text,
                "logprob": t.logprob,
                "alternatives": [[a, lp] for a, lp in t.alternatives],
            }
            for t in response.tokens
        ],
        "usage": list(response.usage),
        "backend_meta": response.backend_meta,
    }


def response_from_body(body: Mapping[str, Any]) -> BackendResponse:
    text = body["text"]
    if not isinstance(text, str):
        raise TypeError("text must be a string")
    raw_tokens = body.get("tokens")
    if raw_tokens is None:
        # fixture shorthand: one opaque token, no alternatives
        tokens: tuple[TokenRecord, ...] = (TokenRecord(text, 0.0),) if text else ()
    else:
        tokens = tuple(
            TokenRecord(
                str(t["text"]),
                float(t["logprob"]),
                tuple((str(a), float(lp)) for a, lp in t.get("alternatives", [])),
            )
            for t in raw_tokens
        )
    usage = body.get("usage") or (0, 0)
    return BackendResponse(text, tokens, (int(usage[0]), int(usage[1])), str(body.get("backend_meta", "")))


# -- live backend -------------------------------------------------------------


class RateLimiter:
    """Token bucket shared by all workers of one run."""

    def __init__(self, rate_per_second: float, burst: int = 1, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep) -> None:
        self.rate = rate_per_second
        self.capacity = max(1, burst)
        self._tokens = float(self.capacity)
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if self.rate <= 0:
            return
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1:
                    self._tokens -= 1
                    return
                wait = (1 - self._tokens) / self.rate
            self._sleep(wait)


class _Transient(Exception):
    def __init__(self, message: str, rate_limited: bool = False) -> None:
        super().__init__(message)
        self.rate_limited = rate_limited


@dataclass
class RetryPolicy:
    max_retries: int = 5
    base_delay: float = 1.0
    max_delay: float = 60.0
    jitter: float = 0.5

    def delay(self, attempt: int, rng: random.Random) -> float:
        base = min(self.max_delay, self.base_delay * (2**attempt))
        return base * (1 + self.jitter * rng.random())


@dataclass
class ChatCompletionsBackend:
    """OpenAI-compatible ``/chat/completions`` client with logprobs."""

    model_id: str
    api_key: str
    base_url: str = "https://api.openai.com/v1"
    timeout: float = 120.0
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    rate_limiter: RateLimiter | None = None
    transport: httpx.BaseTransport | None = None
    sleep: Callable[[float], None] = time.sleep
    rng: random.Random = field(default_factory=random.Random)
    retries_used: int = 0
    calls: int = 0

    def __post_init__(self) -> None:
        self._client = httpx.Client(
            base_url=self.base_url.rstrip("/"),
            timeout=self.timeout,
            transport=self.transport,
            headers={"Authorization": f"Bearer {self.api_key}"},
        )
        self._lock = threading.Lock()

    def close(self) -> None:
        self._client.close()

    def payload(self, request: BackendRequest) -> dict[str, Any]:
        content: list[dict[str, Any]] = [{"type": "text", "text": request.prompt_text}]
        for blob in request.attachments:
            url = "data:image/png;base64," + base64.b64encode(blob).decode("ascii")
            content.append({"type": "image_url", "image_url": {"url": url}})
        body: dict[str, Any] = {
            "model": request.model_id,
            "messages": [{"role": "user", "content": content}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        if request.top_k_logprobs > 0:
            body["logprobs"] = True
            body["top_logprobs"] = min(request.top_k_logprobs, MAX_TOP_LOGPROBS)
        return body

    def complete(self, request: BackendRequest) -> BackendResponse:
        body = self.payload(request)
        attempt = 0
        while True:
            if self.rate_limiter is not None:
                self.rate_limiter.acquire()
            try:
                with self._lock:
                    self.calls += 1
                return self._send(body)
            except _Transient as exc:
                if attempt >= self.retry.max_retries:
                    if exc.rate_limited:
                        raise RateLimitedExhausted(f"still rate limited after {attempt} retries") from exc
                    raise TransportError(f"{exc} (after {attempt} retries)") from exc
                wait = self.retry.delay(attempt, self.rng)
                logger.warning("transient backend failure (%s); retry %d in %.1fs", exc, attempt + 1, wait)
                self.sleep(wait)
                attempt += 1
                with self._lock:
                    self.retries_used += 1

    def _send(self, body: dict[str, Any]) -> BackendResponse:
        try:
            reply = self._client.post("/chat/completions", json=body)
        except (httpx.TimeoutException, httpx.NetworkError, httpx.RemoteProtocolError) as exc:
            raise _Transient(f"{type(exc).__name__}: {exc}") from exc
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        status = reply.status_code
        if status in (401, 403):
            raise AuthError(f"backend rejected credentials (HTTP {status})")
        if status == 429:
            raise _Transient("HTTP 429", rate_limited=True)
        if status in (408, 409) or status >= 500:
            raise _Transient(f"HTTP {status}")
        if status >= 400:
            raise TransportError(f"HTTP {status}: {reply.text[:500]}")
        try:
            data = reply.json()
        except ValueError as exc:
            raise MalformedBackendReply("reply is not JSON") from exc
        return parse_chat_completion(data)


def _token_text(entry: Mapping[str, Any]) -> str:
    return str(entry.get("token", ""))


def parse_chat_completion(data: Mapping[str, Any]) -> BackendResponse:
    """Convert an OpenAI chat-completions reply into a :class:`BackendResponse`.

    Tokens that carry partial UTF-8 sequences are merged with their
    neighbours (log-probabilities summed, alternatives dropped) so the token
    texts concatenate to the message content.
    """
    try:
        choice = data["choices"][0]
        text = choice["message"]["content"] or ""
        entries = ((choice.get("logprobs") or {}).get("content")) or []
        usage = data.get("usage") or {}
        usage_pair = (int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0)))
        meta = json.dumps({"id": data.get("id", ""), "model": data.get("model", "")}, sort_keys=True)
    except (KeyError, IndexError, TypeError, AttributeError) as exc:
        raise MalformedBackendReply(f"unexpected reply shape: {exc}") from exc

    if not entries:
        tokens = (TokenRecord(text, 0.0),) if text else ()
        return BackendResponse(text, tokens, usage_pair, meta)

    try:
        tokens = _tokens_from_entries(entries)
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedBackendReply(f"bad logprob entry: {exc}") from exc
    if "".join(t.text for t in tokens) != text:
        raise MalformedBackendReply("token stream does not reproduce the message content")
    return BackendResponse(text, tokens, usage_pair, meta)


def _tokens_from_entries(entries: list[Mapping[str, Any]]) -> tuple[TokenRecord, ...]:
    plain = [
        TokenRecord(
            _token_text(e),
            min(0.0, float(e["logprob"])),
            tuple((_token_text(a), min(0.0, float(a["logprob"]))) for a in e.get("top_logprobs") or []),
        )
        for e in entries
    ]
    if all(e.get("bytes") is None for e in entries):
        return tuple(plain)
    joined_bytes = b"".join(bytes(e.get("bytes") or _token_text(e).encode("utf-8")) for e in entries)
    if "".join(t.text for t in plain) == joined_bytes.decode("utf-8", errors="replace"):
        return tuple(plain)
    # regroup tokens so that each group decodes to whole characters
    merged: list[TokenRecord] = []
    buf = b""
    lp = 0.0
    group: list[TokenRecord] = []
    for entry, tok in zip(entries, plain):
        buf += bytes(entry.get("bytes") or tok.text.encode("utf-8"))
        lp += tok.logprob
        group.append(tok)
        try:
            decoded = buf.decode("utf-8")
        except UnicodeDecodeError:
            continue
        alternatives = group[0].alternatives if len(group) == 1 else ()
        merged.append(TokenRecord(decoded, lp, alternatives))
        buf, lp, group = b"", 0.0, []
    if buf:
        merged.append(TokenRecord(buf.decode("utf-8", errors="replace"), lp))
    return tuple(merged)


# -- mock backend -------------------------------------------------------------


@dataclass
class _FixtureEntry:
    responses: list[BackendResponse]
    served: int = 0

    def next(self) -> BackendResponse:
        response = self.responses[self.served % len(self.responses)]
        self.served += 1
        return response


class MockBackend:
    """Replays scripted responses keyed by request digest.

    Entries with a ``responses`` list rotate through it on successive calls,
    which is how repeated-judgment variance experiments are scripted.
    """

    def __init__(self, entries: Mapping[str, list[BackendResponse]], default: list[BackendResponse] | None = None) -> None:
        self._entries = {k: _FixtureEntry(list(v)) for k, v in entries.items()}
        self._default = _FixtureEntry(list(default)) if default else None
        self._lock = threading.Lock()
        self.calls = 0
        self.requests: list[str] = []

    def complete(self, request: BackendRequest) -> BackendResponse:
        digest = request_digest(request)
        with self._lock:
            self.calls += 1
            self.requests.append(digest)
            entry = self._entries.get(digest, self._default)
            if entry is None:
                raise UnknownRequest(f"no fixture response for digest {digest}")
            return entry.next()


def mock_backend_from_fixture(path: str | Path) -> MockBackend:
    """Load a fixture: a JSON list of ``{match, response | responses}`` entries.

    ``match`` is ``"digest:<hex>"`` or ``"default"``; each response is a cache
    blob body (``text``, ``tokens``, ``usage``).
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise FixtureParseError(f"cannot read fixture {path}: {exc}") from exc
    if not isinstance(data, list):
        raise FixtureParseError("fixture must be a JSON list")
    entries: dict[str, list[BackendResponse]] = {}
    default: list[BackendResponse] | None = None
    for n, item in enumerate(data):
        try:
            match = item["match"]
            bodies = item["responses"] if "responses" in item else [item["response"]]
            if not bodies:
                raise ValueError("empty responses list")
            responses = [response_from_body(b) for b in bodies]
        except (KeyError, TypeError, ValueError, MalformedBackendReply) as exc:
            raise FixtureParseError(f"fixture entry {n}: {exc}") from exc
        if match == "default":
            default = responses
        elif isinstance(match, str) and match.startswith("digest:"):
            entries[match[len("digest:"):].lower()] = responses
        else:
            raise FixtureParseError(f"fixture entry {n}: bad match {match!r}")
    return MockBackend(entries, default)
