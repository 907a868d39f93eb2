"""Chat-completion backends behind one interface.

Two implementations: an HTTP client for any chat-completions-compatible
endpoint, and a scripted backend that replays canned responses for fully
deterministic offline runs.  Every backend keeps an append-only
transcript of (request, response) pairs.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable

from .errors import (
    BackendError,
    RateLimited,
    ScriptExhausted,
    ScriptMismatch,
    TransportError,
)


class Purpose(str, Enum):
    AGENT_FORWARD = "agent_forward"
    ROUTING = "routing"
    LOSS = "loss"
    GRADIENT_PROMPT = "gradient_prompt"
    GRADIENT_NODE = "gradient_node"
    OPTIMIZER_PROMPT = "optimizer_prompt"
    OPTIMIZER_TOOL = "optimizer_tool"
    OPTIMIZER_NODE = "optimizer_node"
    OPTIMIZER_PIPELINE = "optimizer_pipeline"


# Purposes that belong to the learning loop run at temperature 0 by default;
# only forward execution is meant to be tunable.
LEARNING_PURPOSES = frozenset(Purpose) - {Purpose.AGENT_FORWARD, Purpose.ROUTING}


def default_temperature(purpose: Purpose, forward_temperature: float = 0.0) -> float:
    return 0.0 if purpose in LEARNING_PURPOSES else forward_temperature


@dataclass
class Message:
    role: str  # "system" | "user" | "assistant"
    content: str


@dataclass
class ChatRequest:
    messages: list[Message]
    purpose: Purpose
    temperature: float = 0.0
    max_tokens: int = 1024
    model_id: str = ""

    def __post_init__(self):
        if not self.messages:
            raise ValueError("ChatRequest needs at least one message")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        for i, message in enumerate(self.messages):
            if message.role not in ("system", "user", "assistant"):
                raise ValueError(f"unknown message role {message.role!r}")
            if message.role == "system" and i != 0:
                raise ValueError("system message must come first")

    def text(self) -> str:
        """All message contents joined; used for matching and hashing."""
        return "\n".join(m.content for m in self.messages)

    def digest(self) -> str:
        payload = json.dumps(
            [[m.role, m.content] for m in self.messages], ensure_ascii=False
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class ChatResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_ms: int = 0
    backend_id: str = ""


class Backend:
    """Base class: transcript bookkeeping around a concrete completion call."""

    backend_id = "base"

    def __init__(self):
        self.transcript: list[tuple[ChatRequest, ChatResponse]] = []
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatResponse:
        response = self._complete(request)
        with self._lock:
            self.transcript.append((request, response))
        return response

    def _complete(self, request: ChatRequest) -> ChatResponse:
        raise NotImplementedError

    def calls_with(self, purpose: Purpose) -> list[tuple[ChatRequest, ChatResponse]]:
        return [(req, resp) for req, resp in self.transcript if req.purpose is purpose]


class ScriptMode(str, Enum):
    STRICT_SEQUENCE = "strict_sequence"
    MATCH_ANY = "match_any"


@dataclass
class ScriptEntry:
    response: str
    purpose: Purpose | None = None
    substring: str | None = None

    def matches(self, request: ChatRequest) -> bool:
        # Purpose is checked before substring so scripts stay robust to
        # wording changes in prompt templates.
        if self.purpose is not None and request.purpose is not self.purpose:
            return False
        if self.substring is not None and self.substring not in request.text():
            return False
        return True

    def describe(self) -> str:
        parts = []
        if self.purpose is not None:
            parts.append(f"purpose={self.purpose.value}")
        if self.substring is not None:
            parts.append(f"substring={self.substring!r}")
        return " and ".join(parts) or "any request"


class ScriptedBackend(Backend):
    """Deterministic backend driven by a response script.

    ``strict_sequence`` consumes entries front to back and errors out on a
    mismatch or on exhaustion; it is single-consumer by construction.
    ``match_any`` treats entries as reusable rules, answered by the first
    rule that matches.
    """

    backend_id = "scripted"

    def __init__(self, entries: list[ScriptEntry], mode: ScriptMode = ScriptMode.STRICT_SEQUENCE):
        super().__init__()
        self.entries = list(entries)
        self.mode = mode
        self._cursor = 0

    def _complete(self, request: ChatRequest) -> ChatResponse:
        if self.mode is ScriptMode.STRICT_SEQUENCE:
            if self._cursor >= len(self.entries):
                raise ScriptExhausted(
                    f"script exhausted after {self._cursor} responses "
                    f"(next request purpose: {request.purpose.value})"
                )
            entry = self.entries[self._cursor]
            if not entry.matches(request):
                raise ScriptMismatch(entry.describe(), request.purpose.value)
            self._cursor += 1
        else:
            if not self.entries:
                raise ScriptExhausted("script has no entries")
            entry = next((e for e in self.entries if e.matches(request)), None)
            if entry is None:
                raise ScriptMismatch("any matching rule", request.purpose.value)
        text = entry.response
        return ChatResponse(
            text=text,
            prompt_tokens=sum(len(m.content.split()) for m in request.messages),
            completion_tokens=len(text.split()),
            latency_ms=0,
            backend_id=self.backend_id,
        )

    @classmethod
    def from_file(cls, path: str) -> "ScriptedBackend":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        mode = ScriptMode(data.get("mode", "match_any"))
        entries = []
        for raw in data["entries"]:
            purpose = Purpose(raw["purpose"]) if raw.get("purpose") else None
            entries.append(
                ScriptEntry(
                    response=raw["response"],
                    purpose=purpose,
                    substring=raw.get("substring"),
                )
            )
        return cls(entries, mode)


@dataclass
class RetryPolicy:
    max_attempts: int = 3
    base_delay: float = 1.0
    jitter: float = 0.0

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


def with_retry(
    policy: RetryPolicy,
    call: Callable[[], ChatResponse],
    sleep: Callable[[float], None] = time.sleep,
    rng: random.Random | None = None,
) -> ChatResponse:
    """Run ``call``, retrying retryable backend errors with exponential backoff."""
    attempt = 0
    while True:
        attempt += 1
        try:
            return call()
        except BackendError as err:
            if not err.retryable or attempt >= policy.max_attempts:
                raise
            delay = policy.base_delay * (2 ** (attempt - 1))
            if policy.jitter:
                delay += (rng or random).uniform(0, policy.jitter)
        sleep(delay)


DEFAULT_API_KEY_VAR = "SYMGRAD_API_KEY"
DEFAULT_BASE_VAR = "SYMGRAD_API_BASE"
DEFAULT_MODEL_VAR = "SYMGRAD_MODEL"


class HttpBackend(Backend):
    """Client for an OpenAI-style chat-completions HTTP endpoint."""

    backend_id = "http"

    def __init__(
        self,
        base_url: str,
        api_key: str = "",
        model: str = "",
        session=None,
        timeout: float = 120.0,
        retry_policy: RetryPolicy | None = None,
    ):
        super().__init__()
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.model = model
        self.timeout = timeout
        self.retry_policy = retry_policy or RetryPolicy(max_attempts=3, base_delay=1.0, jitter=0.5)
        if session is None:
            import requests

            session = requests.Session()
        self.session = session

    @classmethod
    def from_env(cls, api_key_var: str = DEFAULT_API_KEY_VAR, **kwargs) -> "HttpBackend":
        base = os.environ.get(DEFAULT_BASE_VAR)
        if not base:
            raise BackendError(f"{DEFAULT_BASE_VAR} is not set")
        return cls(
            base_url=base,
            api_key=os.environ.get(api_key_var, ""),
            model=os.environ.get(DEFAULT_MODEL_VAR, ""),
            **kwargs,
        )

    def build_payload(self, request: ChatRequest) -> dict:
        return {
            "model": request.model_id or self.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }

    def _post_once(self, request: ChatRequest) -> ChatResponse:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        started = time.monotonic()
        try:
            http_response = self.session.post(
                f"{self.base_url}/chat/completions",
                json=self.build_payload(request),
                headers=headers,
                timeout=self.timeout,
            )
        except requests.RequestException as err:
            raise TransportError(str(err)) from err
        latency_ms = int((time.monotonic() - started) * 1000)
        status = http_response.status_code
        if status == 429:
            raise RateLimited(f"rate limited: {http_response.text[:200]}")
        if status >= 500:
            raise TransportError(f"server error {status}: {http_response.text[:200]}")
        if status != 200:
            raise BackendError(f"unexpected status {status}: {http_response.text[:200]}")
        body = http_response.json()
        try:
            text = body["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as err:
            raise BackendError(f"unexpected response shape: {err}") from err
        usage = body.get("usage", {})
        return ChatResponse(
            text=text,
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
            latency_ms=latency_ms,
            backend_id=self.backend_id,
        )

    def _complete(self, request: ChatRequest) -> ChatResponse:
        return with_retry(self.retry_policy, lambda: self._post_once(request))


def transcript_records(backend: Backend) -> list[dict]:
    return [
        {
            "purpose_tag": req.purpose.value,
            "request_hash": req.digest(),
            "response": resp.text,
            "prompt_tokens": resp.prompt_tokens,
            "completion_tokens": resp.completion_tokens,
            "latency_ms": resp.latency_ms,
        }
        for req, resp in backend.transcript
    ]


def write_transcript(backend: Backend, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in transcript_records(backend):
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
