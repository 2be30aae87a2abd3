"""Chat backend tests: scripted determinism, HTTP retry behavior, auditing."""
from __future__ import annotations

import json

import httpx
import pytest

from sceneloop.chat import (
    AuditingBackend,
    AuthFailure,
    BackendUnavailable,
    ChatMessage,
    ChatRequest,
    HttpChatBackend,
    MalformedScript,
    ScriptedChatBackend,
    ScriptExhausted,
    StaticChatBackend,
    load_script,
)


def _request(text: str = "hello") -> ChatRequest:
    return ChatRequest(messages=(ChatMessage(role="user", text=text),))


class TestMessages:
    def test_rejects_unknown_role(self):
        with pytest.raises(ValueError, match="role"):
            ChatMessage(role="wizard", text="hi")

    def test_rejects_empty_message(self):
        with pytest.raises(ValueError):
            ChatMessage(role="user", text="")

    def test_attachment_only_message_is_valid(self):
        msg = ChatMessage(role="user", text="", attachments=("aGk=",))
        assert msg.attachments == ("aGk=",)


class TestScriptedBackend:
    def test_replays_in_order_and_counts(self):
        backend = ScriptedChatBackend(["one", "two"])
        assert backend.complete(_request()).text == "one"
        assert backend.complete(_request()).text == "two"
        assert backend.call_count == 2
        assert backend.remaining == 0

    def test_exhaustion_raises(self):
        backend = ScriptedChatBackend(["only"])
        backend.complete(_request())
        with pytest.raises(ScriptExhausted):
            backend.complete(_request())

    def test_two_instances_replay_identically(self):
        replies = ["a", "b", "c"]
        first = [ScriptedChatBackend(replies).complete(_request()).text]
        second = [ScriptedChatBackend(replies).complete(_request()).text]
        assert first == second

    def test_load_script_round_trip(self, tmp_path):
        path = tmp_path / "script.jsonl"
        path.write_text('{"text": "alpha"}\n{"text": "beta"}\n', encoding="utf-8")
        backend = load_script(path)
        assert backend.complete(_request()).text == "alpha"
        assert backend.complete(_request()).text == "beta"

    def test_load_script_reports_bad_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"text": "ok"}\nnot json\n', encoding="utf-8")
        with pytest.raises(MalformedScript, match=r"bad\.jsonl:2"):
            load_script(path)

    def test_load_script_requires_text_field(self, tmp_path):
        path = tmp_path / "field.jsonl"
        path.write_text('{"reply": "oops"}\n', encoding="utf-8")
        with pytest.raises(MalformedScript, match="text"):
            load_script(path)

    def test_load_script_missing_file(self, tmp_path):
        with pytest.raises(MalformedScript):
            load_script(tmp_path / "absent.jsonl")


class TestStaticBackend:
    def test_fixed_reply_and_count(self):
        backend = StaticChatBackend("always this")
        assert backend.complete(_request()).text == "always this"
        assert backend.complete(_request("anything")).text == "always this"
        assert backend.call_count == 2


class TestAuditingBackend:
    def test_sink_sees_every_exchange_before_return(self):
        events: list[dict] = []
        backend = AuditingBackend(ScriptedChatBackend(["r1", "r2"]), events.append)
        backend.complete(_request("first"))
        backend.complete(_request("second"))
        assert [e["request_id"] for e in events] == ["req-0001", "req-0002"]
        assert events[0]["response_text"] == "r1"
        assert events[0]["messages"][0]["text"] == "first"

    def test_attachments_recorded_as_counts_only(self):
        events: list[dict] = []
        backend = AuditingBackend(ScriptedChatBackend(["ok"]), events.append)
        request = ChatRequest(
            messages=(ChatMessage(role="user", text="look", attachments=("aGk=", "eW8=")),)
        )
        backend.complete(request)
        message = events[0]["messages"][0]
        assert message["attachment_count"] == 2
        assert "attachments" not in message


def _http_backend(handler, **kwargs) -> HttpChatBackend:
    transport = httpx.MockTransport(handler)
    kwargs.setdefault("credential", "test-token")
    kwargs.setdefault("sleep", lambda _s: None)
    return HttpChatBackend("https://chat.example/v1", transport=transport, **kwargs)


def _ok_body(text: str) -> dict:
    return {"choices": [{"message": {"content": text}}], "usage": {"total_tokens": 3}}


class TestHttpBackend:
    def test_round_trip_and_bearer_header(self):
        seen = {}

        def handler(request: httpx.Request) -> httpx.Response:
            seen["auth"] = request.headers.get("authorization")
            seen["body"] = json.loads(request.content)
            return httpx.Response(200, json=_ok_body("pong"))

        backend = _http_backend(handler)
        response = backend.complete(_request("ping"))
        assert response.text == "pong"
        assert seen["auth"] == "Bearer test-token"
        assert seen["body"]["messages"][0] == {"role": "user", "content": "ping"}

    def test_attachments_sent_as_image_parts(self):
        seen = {}

        def handler(request: httpx.Request) -> httpx.Response:
            seen["body"] = json.loads(request.content)
            return httpx.Response(200, json=_ok_body("ok"))

        backend = _http_backend(handler)
        backend.complete(
            ChatRequest(
                messages=(ChatMessage(role="user", text="see", attachments=("aGk=",)),)
            )
        )
        parts = seen["body"]["messages"][0]["content"]
        kinds = [part["type"] for part in parts]
        assert kinds == ["text", "image_url"]
        assert parts[1]["image_url"]["url"].startswith("data:image/png;base64,")

    def test_retries_on_429_then_succeeds(self):
        calls = {"n": 0}

        def handler(request: httpx.Request) -> httpx.Response:
            calls["n"] += 1
            if calls["n"] < 3:
                return httpx.Response(429, json={"error": "slow down"})
            return httpx.Response(200, json=_ok_body("finally"))

        backend = _http_backend(handler, max_retries=3)
        assert backend.complete(_request()).text == "finally"
        assert calls["n"] == 3

    def test_backoff_doubles_per_attempt(self):
        sleeps: list[float] = []

        def handler(request: httpx.Request) -> httpx.Response:
            return httpx.Response(503)

        backend = _http_backend(
            handler, max_retries=2, backoff_base=0.5, sleep=sleeps.append
        )
        with pytest.raises(BackendUnavailable):
            backend.complete(_request())
        # one sleep before each retry, none after the final failure
        assert sleeps == [0.5, 1.0]

    def test_exhausted_retries_raise_unavailable(self):
        def handler(request: httpx.Request) -> httpx.Response:
            return httpx.Response(500, text="boom")

        backend = _http_backend(handler, max_retries=2)
        with pytest.raises(BackendUnavailable):
            backend.complete(_request())

    def test_auth_failure_never_retries(self):
        calls = {"n": 0}

        def handler(request: httpx.Request) -> httpx.Response:
            calls["n"] += 1
            return httpx.Response(401)

        backend = _http_backend(handler, max_retries=5)
        with pytest.raises(AuthFailure):
            backend.complete(_request())
        assert calls["n"] == 1

    def test_timeout_retries_then_unavailable(self):
        def handler(request: httpx.Request) -> httpx.Response:
            raise httpx.ConnectTimeout("no route")

        backend = _http_backend(handler, max_retries=2)
        with pytest.raises(BackendUnavailable, match="no route|retries"):
            backend.complete(_request())

    def test_missing_credential_env_raises_auth_failure(self, monkeypatch):
        monkeypatch.delenv("SCENELOOP_CHAT_CREDENTIAL", raising=False)
        with pytest.raises(AuthFailure, match="SCENELOOP_CHAT_CREDENTIAL"):
            HttpChatBackend("https://chat.example/v1")

    def test_credential_env_fallback(self, monkeypatch):
        monkeypatch.setenv("SCENELOOP_CHAT_CREDENTIAL", "env-token")
        seen = {}

        def handler(request: httpx.Request) -> httpx.Response:
            seen["auth"] = request.headers.get("authorization")
            return httpx.Response(200, json=_ok_body("hi"))

        backend = HttpChatBackend(
            "https://chat.example/v1", transport=httpx.MockTransport(handler)
        )
        backend.complete(_request())
        assert seen["auth"] == "Bearer env-token"

    def test_malformed_success_body_is_unavailable(self):
        def handler(request: httpx.Request) -> httpx.Response:
            return httpx.Response(200, json={"unexpected": True})

        backend = _http_backend(handler)
        with pytest.raises(BackendUnavailable, match="body"):
            backend.complete(_request())
