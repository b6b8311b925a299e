"""Completion backends: a deterministic mock and an HTTP client.

The mock backend is a pure function of its parameters, the request index and
the prompt, which makes whole attack runs byte-reproducible. The HTTP
backend speaks the completions wire format (POST /v1/completions with
``model``/``prompt``/``max_tokens``/``temperature``) and implements its own
retry loop with exponential backoff.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import requests

from .errors import (
    CompletionTimeoutError,
    ConfigError,
    EmptyCorpusError,
    RateLimitedError,
    UpstreamError,
)

API_KEY_ENV_VAR = "LEAKPROBE_API_KEY"

ROLE_FINE_TUNED = "fine_tuned"
ROLE_BASE = "base"


@dataclass(frozen=True)
class GenerationConfig:
    """Sampling parameters shared by every query of a run.

    Unless ``temperature_fixed`` is set, the effective temperature of query
    ``i`` is drawn uniformly from ``[temperature_low, temperature_high]`` by
    a PRNG keyed on ``temperature_seed`` and ``i``, so it never depends on
    call order.
    """

    max_tokens: int = 256
    temperature_low: float = 0.5
    temperature_high: float = 1.0
    temperature_fixed: float | None = None
    temperature_seed: str = "0"
    stop: tuple[str, ...] = ()

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if not (0.0 <= self.temperature_low <= self.temperature_high <= 2.0):
            raise ValueError("need 0 <= temperature_low <= temperature_high <= 2")
        if self.temperature_fixed is not None and not (
            0.0 <= self.temperature_fixed <= 2.0
        ):
            raise ValueError("fixed temperature must be within [0, 2]")

    def to_dict(self) -> dict:
        return {
            "max_tokens": self.max_tokens,
            "temperature_low": self.temperature_low,
            "temperature_high": self.temperature_high,
            "temperature_fixed": self.temperature_fixed,
            "temperature_seed": self.temperature_seed,
            "stop": list(self.stop),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GenerationConfig":
        return cls(
            max_tokens=int(data["max_tokens"]),
            temperature_low=float(data["temperature_low"]),
            temperature_high=float(data["temperature_high"]),
            temperature_fixed=(
                None
                if data.get("temperature_fixed") is None
                else float(data["temperature_fixed"])
            ),
            temperature_seed=str(data["temperature_seed"]),
            stop=tuple(data.get("stop", ())),
        )


def resolved_temperature(config: GenerationConfig, request_index: int) -> float:
    if config.temperature_fixed is not None:
        return config.temperature_fixed
    rng = random.Random(f"temp:{config.temperature_seed}:{request_index}")
    return rng.uniform(config.temperature_low, config.temperature_high)


@dataclass(frozen=True)
class CompletionResult:
    text: str
    model: str
    temperature: float


@dataclass(frozen=True)
class BackendDescriptor:
    """Public identity of a backend, hashed into run fingerprints.

    No secrets: the API key never appears here or in any persisted artifact.
    """

    kind: str
    model: str
    role: str = ROLE_FINE_TUNED
    endpoint: str = ""
    detail: tuple[tuple[str, str], ...] = ()

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "model": self.model,
            "role": self.role,
            "endpoint": self.endpoint,
            "detail": [list(pair) for pair in self.detail],
        }


@dataclass(frozen=True)
class GenerationRecord:
    """One persisted query/completion pair of an attack run."""

    request_index: int
    backend_role: str
    prompt: str
    completion: str
    model: str
    temperature: float
    max_tokens: int
    timestamp: str | None = None
    subject_index: int | None = None

    def to_dict(self) -> dict:
        return {
            "request_index": self.request_index,
            "backend_role": self.backend_role,
            "prompt": self.prompt,
            "completion": self.completion,
            "model": self.model,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "timestamp": self.timestamp,
            "subject_index": self.subject_index,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GenerationRecord":
        return cls(
            request_index=int(data["request_index"]),
            backend_role=str(data["backend_role"]),
            prompt=str(data["prompt"]),
            completion=str(data["completion"]),
            model=str(data["model"]),
            temperature=float(data["temperature"]),
            max_tokens=int(data["max_tokens"]),
            timestamp=data.get("timestamp"),
            subject_index=data.get("subject_index"),
        )

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)


def documents_digest(documents: Sequence[str]) -> str:
    """Order-sensitive sha256 over a document list."""
    h = hashlib.sha256()
    for doc in documents:
        h.update(doc.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


# Digit-free filler vocabulary: non-leaking mock completions must never trip
# the numeric PII patterns.
_FILLER_WORDS = (
    "the quick brown fox jumps over a lazy dog while morning light settles "
    "across quiet fields and distant hills where tall grass bends under "
    "steady wind carrying scattered leaves toward an open meadow beside "
    "calm water that reflects pale clouds drifting slowly everywhere"
).split()


@dataclass(frozen=True)
class MockMemorizingBackend:
    """Simulates a fine-tuned model that regurgitates training documents.

    Query ``i`` leaks a verbatim prefix of document ``i mod len(documents)``
    with probability ``leak_rate`` (decided by a PRNG keyed on the seed and
    ``i``); otherwise it emits digit-free filler text. Completions are a pure
    function of (parameters, request index, prompt), never of call order or
    wall clock.
    """

    documents: tuple[str, ...]
    leak_rate: float
    seed: str
    model: str = "mock-ft"
    role: str = ROLE_FINE_TUNED
    max_in_flight: int = 1

    def __post_init__(self):
        if not (0.0 <= self.leak_rate <= 1.0):
            raise ValueError("leak_rate must be within [0, 1]")
        if self.leak_rate > 0 and not self.documents:
            raise EmptyCorpusError("a leaking mock backend needs documents")

    @property
    def descriptor(self) -> BackendDescriptor:
        return BackendDescriptor(
            kind="mock",
            model=self.model,
            role=self.role,
            detail=(
                ("corpus_digest", documents_digest(self.documents)),
                ("leak_rate", repr(self.leak_rate)),
                ("seed", self.seed),
            ),
        )

    def _leaks(self, request_index: int) -> bool:
        if self.leak_rate >= 1.0:
            return bool(self.documents)
        rng = random.Random(f"leak:{self.seed}:{request_index}")
        return rng.random() < self.leak_rate

    def _leak_text(self, request_index: int, max_tokens: int) -> str:
        doc = self.documents[request_index % len(self.documents)]
        end = 0
        for count, match in enumerate(_iter_words(doc), start=1):
            end = match[1]
            if count >= max_tokens:
                break
        return doc[:end]

    def _filler_text(self, request_index: int) -> str:
        rng = random.Random(f"fill:{self.seed}:{request_index}")
        n = rng.randint(20, 60)
        return " ".join(rng.choice(_FILLER_WORDS) for _ in range(n))

    def complete(
        self, prompt: str, request_index: int, config: GenerationConfig
    ) -> CompletionResult:
        if self._leaks(request_index):
            text = self._leak_text(request_index, config.max_tokens)
        else:
            text = self._filler_text(request_index)
        return CompletionResult(
            text=text,
            model=self.model,
            temperature=resolved_temperature(config, request_index),
        )


def _iter_words(text: str):
    """Yield (start, end) spans of whitespace-delimited words."""
    start = None
    for i, ch in enumerate(text):
        if ch.isspace():
            if start is not None:
                yield (start, i)
                start = None
        elif start is None:
            start = i
    if start is not None:
        yield (start, len(text))


def mock_memorizing_backend(
    documents: Sequence[str],
    leak_rate: float,
    seed: str,
    model: str = "mock-ft",
    role: str = ROLE_FINE_TUNED,
) -> MockMemorizingBackend:
    return MockMemorizingBackend(
        documents=tuple(documents), leak_rate=leak_rate, seed=seed, model=model, role=role
    )


def mock_base_backend(seed: str, model: str = "mock-base") -> MockMemorizingBackend:
    """A mock that memorized nothing: pure filler output."""
    return MockMemorizingBackend(
        documents=(), leak_rate=0.0, seed=seed, model=model, role=ROLE_BASE
    )


# -- HTTP ---------------------------------------------------------------


@dataclass(frozen=True)
class RetryPolicy:
    """Budget for transient failures; delays grow geometrically."""

    max_retries: int = 3
    backoff_base: float = 0.5
    backoff_factor: float = 2.0
    timeout: float = 60.0

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.backoff_base < 0 or self.backoff_factor < 1.0:
            raise ValueError("backoff must be non-negative and non-decreasing")

    def delay(self, attempt: int) -> float:
        return self.backoff_base * self.backoff_factor**attempt


class HttpBackend:
    """Client for a completions endpoint.

    Safe for concurrent calls (per-thread sessions); ``max_in_flight`` tells
    callers how many requests they may keep open at once. Failure handling:
    authorization failures and other 4xx responses are terminal; 429 and
    5xx/connection errors are retried with backoff until the budget runs out
    (RateLimitedError / UpstreamError); request timeouts surface immediately
    as CompletionTimeoutError.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        role: str = ROLE_FINE_TUNED,
        retry: RetryPolicy | None = None,
        max_in_flight: int = 4,
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not endpoint:
            raise ConfigError("backend endpoint is required")
        if max_in_flight < 1:
            raise ConfigError("max_in_flight must be >= 1")
        if api_key is None:
            api_key = os.environ.get(API_KEY_ENV_VAR, "")
        if not api_key:
            raise ConfigError(f"API key missing: set {API_KEY_ENV_VAR}")
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.role = role
        self._api_key = api_key
        self.retry = retry or RetryPolicy()
        self.max_in_flight = max_in_flight
        self._fixed_session = session
        self._local = threading.local()
        self._sleep = sleep

    @property
    def _session(self) -> requests.Session:
        if self._fixed_session is not None:
            return self._fixed_session
        if not hasattr(self._local, "session"):
            self._local.session = requests.Session()
        return self._local.session

    @property
    def descriptor(self) -> BackendDescriptor:
        return BackendDescriptor(
            kind="http", model=self.model, role=self.role, endpoint=self.endpoint
        )

    def complete(
        self, prompt: str, request_index: int, config: GenerationConfig
    ) -> CompletionResult:
        temperature = resolved_temperature(config, request_index)
        body = {
            "model": self.model,
            "prompt": prompt,
            "max_tokens": config.max_tokens,
            "temperature": temperature,
        }
        if config.stop:
            body["stop"] = list(config.stop)
        headers = {
            "Authorization": f"Bearer {self._api_key}",
            "Content-Type": "application/json",
        }
        url = f"{self.endpoint}/v1/completions"

        attempts = 1 + self.retry.max_retries
        last_error = ""
        for attempt in range(attempts):
            if attempt:
                self._sleep(self.retry.delay(attempt - 1))
            try:
                resp = self._session.post(
                    url, json=body, headers=headers, timeout=self.retry.timeout
                )
            except requests.Timeout as exc:
                raise CompletionTimeoutError(
                    f"request {request_index} timed out after {self.retry.timeout}s"
                ) from exc
            except requests.ConnectionError as exc:
                last_error = f"connection error: {exc}"
                continue
            if resp.status_code in (401, 403):
                raise ConfigError(f"authorization rejected ({resp.status_code})")
            if resp.status_code == 429:
                last_error = "rate limited (429)"
                continue
            if resp.status_code >= 500:
                last_error = f"server error ({resp.status_code})"
                continue
            if resp.status_code != 200:
                raise UpstreamError(f"unexpected status {resp.status_code}")
            return self._parse(resp, temperature)

        if last_error.startswith("rate limited"):
            raise RateLimitedError(f"gave up after {attempts} attempts: {last_error}")
        raise UpstreamError(f"gave up after {attempts} attempts: {last_error}")

    def _parse(self, resp: requests.Response, temperature: float) -> CompletionResult:
        try:
            payload = resp.json()
            text = payload["choices"][0]["text"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise UpstreamError(f"malformed completion response: {exc}") from exc
        return CompletionResult(
            text=str(text),
            model=str(payload.get("model", self.model)),
            temperature=temperature,
        )


def http_backend(
    endpoint: str,
    model: str,
    api_key: str | None = None,
    role: str = ROLE_FINE_TUNED,
    retry: RetryPolicy | None = None,
    **kwargs,
) -> HttpBackend:
    return HttpBackend(endpoint, model, api_key=api_key, role=role, retry=retry, **kwargs)


class TokenBudget(NamedTuple):
    """Worst-case token spend for a planned run and its word equivalent."""

    max_tokens_total: int
    approx_words: int


def estimate_token_budget(n_queries: int, config: GenerationConfig) -> TokenBudget:
    """Token ceiling of a run: n_queries completions of up to max_tokens.

    The word equivalent applies the three-quarters-of-a-token-per-word rule
    of thumb, rounded half-up to an integer.
    """
    if n_queries < 0:
        raise ValueError("n_queries must be >= 0")
    total = n_queries * config.max_tokens
    return TokenBudget(max_tokens_total=total, approx_words=(3 * total + 2) // 4)
