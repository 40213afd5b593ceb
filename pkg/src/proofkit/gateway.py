"""Outbound client for OpenAI-compatible chat-completion endpoints.

One dialect is supported: POST {base_url}{path} with the chat
completions JSON shape; providers that speak something else adapt
behind it.  Retries use exponential backoff with jitter, clamped so
consecutive delays never decrease.  Credentials come from an
environment variable and are scrubbed from every log line and error
message this module produces.
"""

from __future__ import annotations

import logging
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field

import httpx

log = logging.getLogger(__name__)

DEFAULT_CREDENTIAL_ENV = "PROOFKIT_API_KEY"
DEFAULT_COMPLETIONS_PATH = "/v1/chat/completions"

# Providers commonly cap top_logprobs at 20; score extraction asks for
# the full window so every grid value can be observed.
MAX_TOP_LOGPROBS = 20

_ROLES = ("system", "user", "assistant")


class GatewayError(Exception):
    """Base class for completion failures."""


class CredentialMissingError(GatewayError):
    pass


class NonRetryableError(GatewayError):
    def __init__(self, status: int, body: str):
        super().__init__(f"provider returned non-retryable status {status}: {body[:200]}")
        self.status = status
        self.body = body


class RequestTimeoutError(GatewayError):
    pass


class ExhaustedError(GatewayError):
    def __init__(self, attempts: int, last_error: Exception):
        super().__init__(f"retry budget exhausted after {attempts} attempts: {last_error}")
        self.attempts = attempts
        self.last_error = last_error


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in _ROLES:
            raise ValueError(f"role must be one of {_ROLES}")


@dataclass(frozen=True)
class CompletionRequest:
    model: str
    messages: tuple[ChatMessage, ...]
    max_tokens: int = 4096
    temperature: float = 0.0
    top_logprobs: int = 0
    # Opaque provider extras merged into the payload (e.g. reasoning-mode
    # toggles); the gateway assigns them no semantics.
    extra: dict | None = None

    def __post_init__(self):
        if not any(m.role == "user" for m in self.messages):
            raise ValueError("at least one user message required")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if not 0 <= self.top_logprobs <= MAX_TOP_LOGPROBS:
            raise ValueError(f"top_logprobs must be in [0, {MAX_TOP_LOGPROBS}]")

    @classmethod
    def simple(cls, model: str, user: str, system: str | None = None, **kwargs) -> CompletionRequest:
        messages = []
        if system is not None:
            messages.append(ChatMessage("system", system))
        messages.append(ChatMessage("user", user))
        return cls(model=model, messages=tuple(messages), **kwargs)


@dataclass(frozen=True)
class TokenLogprobs:
    token: str
    logprob: float
    top_alternatives: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.logprob > 0:
            raise ValueError("logprob must be <= 0")
        lps = [lp for _, lp in self.top_alternatives]
        if lps != sorted(lps, reverse=True):
            raise ValueError("top_alternatives must be sorted descending by logprob")


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    token_logprobs: tuple[TokenLogprobs, ...] | None
    usage: Usage
    provider_latency: float
    attempts: int = 1


@dataclass(frozen=True)
class RetryPolicy:
    retries: int = 4
    base_delay: float = 1.0
    max_delay: float = 30.0
    jitter: float = 0.5

    def __post_init__(self):
        if self.retries < 0 or self.base_delay <= 0 or self.max_delay < self.base_delay:
            raise ValueError("invalid retry policy")
        if not 0 <= self.jitter <= 1:
            raise ValueError("jitter fraction must be in [0, 1]")


def _scrub(text: str, secret: str | None) -> str:
    if secret:
        return text.replace(secret, "***")
    return text


def _parse_token_logprobs(choice: dict) -> tuple[TokenLogprobs, ...] | None:
    block = choice.get("logprobs")
    if not block or not block.get("content"):
        return None
    out = []
    for entry in block["content"]:
        alts = tuple(
            sorted(
                ((alt["token"], min(float(alt["logprob"]), 0.0)) for alt in entry.get("top_logprobs", [])),
                key=lambda pair: -pair[1],
            )
        )
        out.append(
            TokenLogprobs(
                token=entry["token"],
                logprob=min(float(entry["logprob"]), 0.0),
                top_alternatives=alts,
            )
        )
    return tuple(out)


class ChatGateway:
    """Thread-safe client; ``complete_batch`` fans out over a bounded pool."""

    def __init__(
        self,
        base_url: str,
        credential_env: str = DEFAULT_CREDENTIAL_ENV,
        api_key: str | None = None,
        path: str = DEFAULT_COMPLETIONS_PATH,
        timeout: float = 120.0,
        retry: RetryPolicy | None = None,
        rng: random.Random | None = None,
        transport: httpx.BaseTransport | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.credential_env = credential_env
        self._api_key = api_key
        self.path = path
        self.retry = retry or RetryPolicy()
        self._rng = rng or random.Random()
        self._sleep = time.sleep
        self._client = httpx.Client(base_url=self.base_url, timeout=timeout, transport=transport)
        self._lock = threading.Lock()

    def close(self):
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _credential(self) -> str:
        if self._api_key:
            return self._api_key
        key = os.environ.get(self.credential_env, "")
        if not key:
            raise CredentialMissingError(
                f"no credential: set {self.credential_env} or pass api_key"
            )
        return key

    def _payload(self, req: CompletionRequest) -> dict:
        payload = {
            "model": req.model,
            "messages": [{"role": m.role, "content": m.content} for m in req.messages],
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        }
        if req.top_logprobs > 0:
            payload["logprobs"] = True
            payload["top_logprobs"] = req.top_logprobs
        if req.extra:
            payload.update(req.extra)
        return payload

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        """One completion with retry on 429/5xx/timeouts.

        Raises NonRetryableError on other HTTP errors, ExhaustedError once
        the retry budget is spent, CredentialMissingError before any
        network traffic when no key is configured.
        """
        key = self._credential()
        payload = self._payload(req)
        headers = {"Authorization": f"Bearer {key}"}
        policy = self.retry
        last_error: Exception | None = None
        previous_delay = 0.0

        for attempt in range(1, policy.retries + 2):
            started = time.monotonic()
            try:
                resp = self._client.post(self.path, json=payload, headers=headers)
            except httpx.TimeoutException as exc:
                last_error = RequestTimeoutError(_scrub(f"attempt {attempt} timed out: {exc}", key))
            except httpx.HTTPError as exc:
                # Connection-level trouble is treated like a 5xx.
                last_error = GatewayError(_scrub(f"transport failure: {exc}", key))
            else:
                latency = time.monotonic() - started
                if resp.status_code == 200:
                    data = resp.json()
                    choice = data["choices"][0]
                    usage = data.get("usage") or {}
                    return CompletionResponse(
                        text=choice["message"]["content"],
                        token_logprobs=_parse_token_logprobs(choice),
                        usage=Usage(
                            prompt_tokens=int(usage.get("prompt_tokens", 0)),
                            completion_tokens=int(usage.get("completion_tokens", 0)),
                        ),
                        provider_latency=latency,
                        attempts=attempt,
                    )
                if resp.status_code == 429 or 500 <= resp.status_code < 600:
                    last_error = GatewayError(
                        _scrub(f"retryable status {resp.status_code}: {resp.text[:200]}", key)
                    )
                else:
                    raise NonRetryableError(resp.status_code, _scrub(resp.text, key))

            if attempt > policy.retries:
                break
            step = min(policy.base_delay * (2 ** (attempt - 1)), policy.max_delay)
            jittered = step * (1 + self._rng.uniform(-policy.jitter, policy.jitter))
            # Clamp so the delay sequence never decreases between retries.
            delay = max(previous_delay, jittered)
            previous_delay = delay
            log.debug("retry %d after %.2fs (%s)", attempt, delay, last_error)
            self._sleep(delay)

        if isinstance(last_error, RequestTimeoutError):
            raise last_error
        raise ExhaustedError(policy.retries + 1, last_error or GatewayError("unknown"))

    def complete_batch(
        self, reqs: list[CompletionRequest], max_in_flight: int = 8
    ) -> list[tuple[int, CompletionResponse | GatewayError]]:
        """Run all requests with at most ``max_in_flight`` outstanding.

        Per-item failures come back as GatewayError values in their slot;
        the batch itself only fails on configuration errors (e.g. a
        missing credential, which would fail every item identically).
        """
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if not reqs:
            return []
        self._credential()
        results: list[tuple[int, CompletionResponse | GatewayError]] = [None] * len(reqs)  # type: ignore[list-item]
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            futures = {pool.submit(self.complete, req): i for i, req in enumerate(reqs)}
            for future in as_completed(futures):
                i = futures[future]
                try:
                    results[i] = (i, future.result())
                except GatewayError as exc:
                    results[i] = (i, exc)
        return results
