"""Model providers: a deterministic scripted provider for tests and replay, a
generic OpenAI-style chat-completion HTTP client for live runs, and the token
ledger / cost accounting both feed into.

Credentials are only ever read from environment variables named in the
provider config; they never appear in config files or logs.
"""

from __future__ import annotations

import os
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping

import requests

DEFAULT_TEMPERATURE = 0.01
DEFAULT_MAX_TOKENS = 2048

RETRY_BACKOFF_S = (0.5, 1.0, 2.0)


@dataclass(frozen=True)
class ChatRequest:
    user: str
    system: str = ""
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    tag: str = "executor"

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be > 0")


@dataclass(frozen=True)
class CompletionResult:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_ms: int = 0

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be >= 0")


@dataclass(frozen=True)
class ProviderRef:
    """Declarative provider config, loadable from a config file."""

    kind: str
    endpoint: str | None = None
    model_name: str | None = None
    credential_env: str | None = None
    price: tuple[float, float] | None = None
    extra: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in ("scripted", "http_chat"):
            raise ValueError(f"unknown provider kind {self.kind!r}")
        if self.kind == "http_chat" and (not self.endpoint or not self.model_name):
            raise ValueError("http_chat providers require endpoint and model_name")


class ProviderError(Exception):
    pass


class QueueExhaustedError(ProviderError):
    pass


class TransportError(ProviderError):
    pass


class AuthError(ProviderError):
    pass


class RateLimitError(ProviderError):
    pass


class Provider:
    """Interface every provider implements; must be safe under concurrent calls."""

    model_name: str = "scripted"

    def complete(self, request: ChatRequest) -> CompletionResult:
        raise NotImplementedError


class ScriptedProvider(Provider):
    """Pops pre-seeded responses per request tag; the backbone of golden traces.

    Queue entries are either plain response strings or dicts
    ``{"text": ..., "prompt_tokens": ..., "completion_tokens": ...}`` when a
    test needs exact token accounting. Requests are recorded for inspection.
    """

    def __init__(self, responses: Mapping[str, Iterable[Any]] | None = None, model_name: str = "scripted") -> None:
        self.model_name = model_name
        self._queues: dict[str, deque[Any]] = {}
        self._lock = threading.Lock()
        self.calls: list[ChatRequest] = []
        for tag, entries in (responses or {}).items():
            self._queues[tag] = deque(entries)

    def push(self, tag: str, *entries: Any) -> None:
        with self._lock:
            self._queues.setdefault(tag, deque()).extend(entries)

    def pending(self, tag: str) -> int:
        with self._lock:
            return len(self._queues.get(tag, ()))

    def complete(self, request: ChatRequest) -> CompletionResult:
        with self._lock:
            self.calls.append(request)
            queue = self._queues.get(request.tag)
            if not queue:
                raise QueueExhaustedError(f"no scripted response left for tag {request.tag!r}")
            entry = queue.popleft()
        if isinstance(entry, str):
            prompt_len = len(request.system) + len(request.user)
            return CompletionResult(entry, prompt_tokens=prompt_len // 4, completion_tokens=len(entry) // 4)
        return CompletionResult(
            text=entry["text"],
            prompt_tokens=int(entry.get("prompt_tokens", 0)),
            completion_tokens=int(entry.get("completion_tokens", 0)),
        )


class HttpChatProvider(Provider):
    """One OpenAI-style chat call per complete(), with bounded retry.

    Transport failures, 429, and 5xx responses are retried up to 3 times with
    0.5s/1s/2s backoff; auth failures (401/403) fail immediately.
    """

    def __init__(self, ref: ProviderRef, session: requests.Session | None = None, sleep: Callable[[float], None] = time.sleep) -> None:
        if ref.kind != "http_chat":
            raise ValueError("HttpChatProvider requires an http_chat ProviderRef")
        self.ref = ref
        self.model_name = ref.model_name or ""
        self._session = session or requests.Session()
        self._sleep = sleep

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.ref.credential_env:
            token = os.environ.get(self.ref.credential_env)
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def _body(self, request: ChatRequest) -> dict[str, Any]:
        messages = []
        if request.system:
            messages.append({"role": "system", "content": request.system})
        messages.append({"role": "user", "content": request.user})
        body: dict[str, Any] = {
            "model": self.ref.model_name,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        # Decoding knobs beyond temperature (top_p, seed, ...) pass through as-is.
        for key, value in self.ref.extra.items():
            if key not in ("responses",):
                body.setdefault(key, value)
        return body

    def complete(self, request: ChatRequest) -> CompletionResult:
        last_error: Exception | None = None
        attempts = len(RETRY_BACKOFF_S) + 1
        for attempt in range(attempts):
            start = time.monotonic()
            try:
                response = self._session.post(
                    self.ref.endpoint, json=self._body(request), headers=self._headers(), timeout=120
                )
            except requests.RequestException as exc:
                last_error = TransportError(str(exc))
            else:
                if response.status_code in (401, 403):
                    raise AuthError(f"authentication failed ({response.status_code})")
                if response.status_code == 429:
                    last_error = RateLimitError("rate limited (429)")
                elif response.status_code >= 500:
                    last_error = TransportError(f"server error ({response.status_code})")
                else:
                    try:
                        payload = response.json()
                        text = payload["choices"][0]["message"]["content"]
                    except (ValueError, KeyError, IndexError, TypeError) as exc:
                        raise TransportError(f"malformed completion response: {exc}") from exc
                    usage = payload.get("usage", {}) or {}
                    latency = int((time.monotonic() - start) * 1000)
                    return CompletionResult(
                        text=text or "",
                        prompt_tokens=int(usage.get("prompt_tokens", 0)),
                        completion_tokens=int(usage.get("completion_tokens", 0)),
                        latency_ms=latency,
                    )
            if attempt < attempts - 1:
                self._sleep(RETRY_BACKOFF_S[attempt])
        assert last_error is not None
        raise last_error


def build_provider(ref: ProviderRef) -> Provider:
    """Instantiate a provider from its declarative config.

    Scripted refs read their queues from ``extra["responses"]`` — either a tag
    -> entries map, or a bare list applied to ``extra["tag"]`` (default
    "executor").
    """
    if ref.kind == "scripted":
        responses = ref.extra.get("responses", {})
        if isinstance(responses, list):
            responses = {ref.extra.get("tag", "executor"): responses}
        return ScriptedProvider(responses, model_name=ref.model_name or "scripted")
    return HttpChatProvider(ref)


@dataclass(frozen=True)
class LedgerEntry:
    tag: str
    model: str
    result: CompletionResult


class Ledger:
    """Append-only, thread-safe record of every completed provider call."""

    def __init__(self) -> None:
        self._entries: list[LedgerEntry] = []
        self._lock = threading.Lock()

    def record(self, tag: str, model: str, result: CompletionResult) -> None:
        with self._lock:
            self._entries.append(LedgerEntry(tag, model, result))

    def entries(self) -> list[LedgerEntry]:
        with self._lock:
            return list(self._entries)

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


def call(provider: Provider, request: ChatRequest, ledger: Ledger | None = None) -> CompletionResult:
    """Run one completion and account for it; every model call funnels through here."""
    result = provider.complete(request)
    if ledger is not None:
        ledger.record(request.tag, provider.model_name, result)
    return result


@dataclass
class UsageTotals:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    calls: int = 0
    cost_usd: float | None = 0.0


@dataclass
class CostSummary:
    per_tag: dict[str, UsageTotals] = field(default_factory=dict)
    total: UsageTotals = field(default_factory=UsageTotals)

    def to_dict(self) -> dict:
        def fmt(u: UsageTotals) -> dict:
            return {
                "prompt_tokens": u.prompt_tokens,
                "completion_tokens": u.completion_tokens,
                "calls": u.calls,
                "cost_usd": u.cost_usd,
            }

        return {"per_tag": {tag: fmt(u) for tag, u in sorted(self.per_tag.items())}, "total": fmt(self.total)}


def cost_report(
    entries: Iterable[tuple[str, str, int, int]] | Iterable[LedgerEntry],
    prices: Mapping[str, tuple[float, float]] | None = None,
) -> CostSummary:
    """Aggregate token usage per tag and compute dollar cost where prices are known.

    Accepts LedgerEntry objects or raw (tag, model, prompt_tokens,
    completion_tokens) tuples. Cost is token-sums times price, computed per
    (tag, model) bucket, so totals are exact and additive. A model missing from
    the price map marks the affected totals' cost as unknown (None).
    """
    prices = prices or {}
    summary = CostSummary()
    sums: dict[tuple[str, str], list[int]] = {}
    for entry in entries:
        if isinstance(entry, LedgerEntry):
            tag, model = entry.tag, entry.model
            prompt, completion = entry.result.prompt_tokens, entry.result.completion_tokens
        else:
            tag, model, prompt, completion = entry
        bucket = sums.setdefault((tag, model), [0, 0, 0])
        bucket[0] += prompt
        bucket[1] += completion
        bucket[2] += 1

    for (tag, model), (prompt_sum, completion_sum, calls) in sorted(sums.items()):
        price = prices.get(model)
        cost = None if price is None else prompt_sum * price[0] / 1e6 + completion_sum * price[1] / 1e6
        for target in (summary.per_tag.setdefault(tag, UsageTotals()), summary.total):
            target.prompt_tokens += prompt_sum
            target.completion_tokens += completion_sum
            target.calls += calls
            if cost is None:
                target.cost_usd = None
            elif target.cost_usd is not None:
                target.cost_usd += cost
    return summary
