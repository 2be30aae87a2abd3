"""Chat-completion backends: production HTTP client plus deterministic doubles.

All backends expose one operation, ``complete(request) -> response``.  The
HTTP client targets a chat-completions style endpoint (POST, bearer
credential, role-tagged messages, inline base64 image attachments) and
retries transient failures (429, 5xx, timeouts) with exponential backoff.
Authentication failures never retry.

Two deterministic doubles support testing and replay: a scripted backend
that returns queued reply texts in order, and a static backend that returns
one fixed text forever.  Both count calls so tests can assert consumption.

Wrap any backend in :class:`AuditingBackend` to append every request and
response to a sink before the response reaches the caller; the workflow uses
this to put a full chat audit trail in the run log.
"""
from __future__ import annotations

import itertools
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Protocol

import httpx

__all__ = [
    "AuditingBackend",
    "AuthFailure",
    "BackendUnavailable",
    "ChatBackend",
    "ChatBackendError",
    "ChatMessage",
    "ChatRequest",
    "ChatResponse",
    "HttpChatBackend",
    "MalformedScript",
    "ScriptExhausted",
    "ScriptedChatBackend",
    "StaticChatBackend",
    "load_script",
]

_ROLES = ("system", "user", "assistant")


class ChatBackendError(RuntimeError):
    """Base class for chat backend failures."""


class BackendUnavailable(ChatBackendError):
    """Transient failures exhausted their retries, or a non-auth hard error."""


class AuthFailure(ChatBackendError):
    """Credential rejected (401/403). Never retried."""


class ScriptExhausted(ChatBackendError):
    """The scripted backend has no queued reply left."""


class MalformedScript(ChatBackendError):
    """Script file is not JSONL with a string ``text`` field per line."""


@dataclass(frozen=True)
class ChatMessage:
    """One role-tagged message; attachments are base64 PNG payloads."""

    role: str
    text: str = ""
    attachments: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.role not in _ROLES:
            raise ValueError(f"role must be one of {_ROLES}, got {self.role!r}")
        if not self.text and not self.attachments:
            raise ValueError("message needs text or at least one attachment")
        object.__setattr__(self, "attachments", tuple(self.attachments))


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[ChatMessage, ...]
    model: str = "default"
    temperature: float = 0.0
    max_tokens: int = 2048
    request_id: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ValueError("request needs at least one message")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    usage: dict[str, int] = field(default_factory=dict)
    latency: float = 0.0


class ChatBackend(Protocol):
    def complete(self, request: ChatRequest) -> ChatResponse: ...


def _wire_message(message: ChatMessage) -> dict[str, Any]:
    if not message.attachments:
        return {"role": message.role, "content": message.text}
    content: list[dict[str, Any]] = []
    if message.text:
        content.append({"type": "text", "text": message.text})
    for b64 in message.attachments:
        content.append(
            {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}}
        )
    return {"role": message.role, "content": content}


class HttpChatBackend:
    """Chat-completions HTTP client with capped exponential backoff.

    The bearer credential comes from ``credential`` or, when omitted, from
    the environment variable named by ``env_var``; a missing credential is
    rejected at construction so it never surfaces as a late HTTP 401.
    ``sleep`` is injectable so retry schedules can be tested without waiting.
    """

    def __init__(
        self,
        endpoint: str,
        *,
        credential: str | None = None,
        env_var: str = "SCENELOOP_CHAT_CREDENTIAL",
        max_retries: int = 3,
        backoff_base: float = 0.5,
        timeout: float = 60.0,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        import os

        self.endpoint = endpoint
        self.env_var = env_var
        self._credential = credential if credential is not None else os.environ.get(env_var, "")
        if not self._credential:
            raise AuthFailure(
                f"no chat credential: pass credential= or set the {env_var} "
                "environment variable"
            )
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self._sleep = sleep
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def complete(self, request: ChatRequest) -> ChatResponse:
        payload = {
            "model": request.model,
            "messages": [_wire_message(m) for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        headers = {"Authorization": f"Bearer {self._credential}"}
        last_error = "no attempt made"
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self.backoff_base * 2 ** (attempt - 1))
            started = time.monotonic()
            try:
                response = self._client.post(self.endpoint, json=payload, headers=headers)
            except httpx.TimeoutException as exc:
                last_error = f"timeout: {exc}"
                continue
            except httpx.HTTPError as exc:
                last_error = f"transport error: {exc}"
                continue
            if response.status_code in (401, 403):
                raise AuthFailure(
                    f"credential rejected with HTTP {response.status_code} "
                    f"(set via ${self.env_var})"
                )
            if response.status_code == 429 or response.status_code >= 500:
                last_error = f"HTTP {response.status_code}"
                continue
            if response.status_code != 200:
                raise BackendUnavailable(
                    f"HTTP {response.status_code}: {response.text[:200]}"
                )
            return self._parse_body(response, time.monotonic() - started)
        raise BackendUnavailable(
            f"gave up after {self.max_retries + 1} attempts; last failure: {last_error}"
        )

    @staticmethod
    def _parse_body(response: httpx.Response, latency: float) -> ChatResponse:
        try:
            body = response.json()
            text = body["choices"][0]["message"]["content"]
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailable(f"unparseable completion body: {exc}") from None
        if not isinstance(text, str):
            raise BackendUnavailable("completion content is not a string")
        usage = body.get("usage") or {}
        return ChatResponse(
            text=text,
            usage={k: int(v) for k, v in usage.items() if isinstance(v, (int, float))},
            latency=latency,
        )


class ScriptedChatBackend:
    """Replays a fixed list of reply texts in order. Thread-safe cursor."""

    def __init__(self, replies: Iterable[str], name: str = "<script>") -> None:
        self.replies = tuple(replies)
        self.name = name
        self._cursor = 0
        self._lock = threading.Lock()

    @property
    def call_count(self) -> int:
        return self._cursor

    @property
    def remaining(self) -> int:
        return len(self.replies) - self._cursor

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            if self._cursor >= len(self.replies):
                raise ScriptExhausted(
                    f"{self.name}: no reply left after {len(self.replies)} calls"
                )
            text = self.replies[self._cursor]
            self._cursor += 1
        return ChatResponse(text=text, usage={}, latency=0.0)


def load_script(path: str | Path) -> ScriptedChatBackend:
    """Load a JSONL script: one object per line, field ``text``."""
    path = Path(path)
    replies: list[str] = []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise MalformedScript(f"cannot read script {path}: {exc}") from None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedScript(f"{path}:{lineno}: invalid JSON: {exc}") from None
        if not isinstance(record, dict) or not isinstance(record.get("text"), str):
            raise MalformedScript(f"{path}:{lineno}: expected an object with a string 'text'")
        replies.append(record["text"])
    return ScriptedChatBackend(replies, name=str(path))


class StaticChatBackend:
    """Always returns the same text. The dumbest possible deterministic double."""

    def __init__(self, text: str) -> None:
        if not text:
            raise ValueError("static reply text must be non-empty")
        self.text = text
        self._calls = 0
        self._lock = threading.Lock()

    @property
    def call_count(self) -> int:
        return self._calls

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self._calls += 1
        return ChatResponse(text=self.text, usage={}, latency=0.0)


class AuditingBackend:
    """Delegates to an inner backend, recording every exchange first.

    ``sink`` receives one dict per completed call; it runs before the
    response is surfaced, so the audit trail can never lag the caller.
    Requests without an id get a unique sequential one.
    """

    def __init__(self, inner: ChatBackend, sink: Callable[[dict[str, Any]], None]) -> None:
        self.inner = inner
        self.sink = sink
        self._ids = itertools.count(1)

    def complete(self, request: ChatRequest) -> ChatResponse:
        if not request.request_id:
            request = ChatRequest(
                messages=request.messages,
                model=request.model,
                temperature=request.temperature,
                max_tokens=request.max_tokens,
                request_id=f"req-{next(self._ids):04d}",
            )
        response = self.inner.complete(request)
        self.sink(
            {
                "request_id": request.request_id,
                "model": request.model,
                "temperature": request.temperature,
                "messages": [
                    {
                        "role": m.role,
                        "text": m.text,
                        "attachment_count": len(m.attachments),
                    }
                    for m in request.messages
                ],
                "response_text": response.text,
                "usage": response.usage,
                "latency": response.latency,
            }
        )
        return response
