from __future__ import annotations

import json

import pytest

from symgrad import (
    ChatRequest,
    ChatResponse,
    HttpBackend,
    Message,
    Purpose,
    RetryPolicy,
    ScriptedBackend,
    ScriptEntry,
    ScriptMode,
    with_retry,
)
from symgrad.errors import BackendError, RateLimited, ScriptExhausted, ScriptMismatch, TransportError
from symgrad.gateway import default_temperature, transcript_records

from conftest import match_any, rule, strict


def _req(content="hello", purpose=Purpose.AGENT_FORWARD):
    return ChatRequest(messages=[Message("user", content)], purpose=purpose)


class TestChatRequest:
    def test_empty_messages_rejected(self):
        with pytest.raises(ValueError):
            ChatRequest(messages=[], purpose=Purpose.LOSS)

    def test_temperature_range(self):
        with pytest.raises(ValueError):
            ChatRequest(messages=[Message("user", "x")], purpose=Purpose.LOSS, temperature=2.5)

    def test_system_must_be_first(self):
        with pytest.raises(ValueError):
            ChatRequest(
                messages=[Message("user", "x"), Message("system", "s")],
                purpose=Purpose.LOSS,
            )

    def test_digest_stable(self):
        assert _req().digest() == _req().digest()
        assert _req("a").digest() != _req("b").digest()


class TestScriptedBackend:
    def test_single_entry(self):
        backend = strict(rule("hi there"))
        response = backend.complete(_req())
        assert response.text == "hi there"
        assert len(backend.transcript) == 1

    def test_strict_exhaustion(self):
        backend = strict(rule("only one"))
        backend.complete(_req())
        with pytest.raises(ScriptExhausted):
            backend.complete(_req())

    def test_strict_mismatch_on_purpose(self):
        backend = strict(rule("x", purpose=Purpose.LOSS))
        with pytest.raises(ScriptMismatch):
            backend.complete(_req(purpose=Purpose.AGENT_FORWARD))

    def test_strict_mismatch_on_substring(self):
        backend = strict(rule("x", substring="needle"))
        with pytest.raises(ScriptMismatch):
            backend.complete(_req("haystack"))

    def test_match_any_rules_are_reusable(self):
        backend = match_any(rule("fwd", purpose=Purpose.AGENT_FORWARD))
        assert backend.complete(_req()).text == "fwd"
        assert backend.complete(_req()).text == "fwd"
        assert len(backend.transcript) == 2

    def test_match_any_first_match_wins(self):
        backend = match_any(
            rule("specific", purpose=Purpose.LOSS, substring="needle"),
            rule("generic", purpose=Purpose.LOSS),
        )
        assert backend.complete(_req("has needle", Purpose.LOSS)).text == "specific"
        assert backend.complete(_req("plain", Purpose.LOSS)).text == "generic"

    def test_match_any_no_match(self):
        backend = match_any(rule("x", purpose=Purpose.LOSS))
        with pytest.raises(ScriptMismatch):
            backend.complete(_req(purpose=Purpose.ROUTING))

    def test_empty_script(self):
        backend = match_any()
        with pytest.raises(ScriptExhausted):
            backend.complete(_req())

    def test_token_accounting_deterministic(self):
        backend = match_any(rule("two words"))
        response = backend.complete(_req("three little words"))
        assert response.prompt_tokens == 3
        assert response.completion_tokens == 2
        assert response.latency_ms == 0

    def test_from_file(self, tmp_path):
        path = tmp_path / "script.json"
        path.write_text(
            json.dumps(
                {
                    "mode": "match_any",
                    "entries": [
                        {"purpose": "loss", "response": "<score>5</score>"},
                        {"substring": "ping", "response": "pong"},
                    ],
                }
            )
        )
        backend = ScriptedBackend.from_file(str(path))
        assert backend.mode is ScriptMode.MATCH_ANY
        assert backend.complete(_req("ping")).text == "pong"


class TestRetry:
    def test_immediate_success_one_call(self):
        calls = []

        def call():
            calls.append(1)
            return ChatResponse(text="ok")

        result = with_retry(RetryPolicy(max_attempts=1, base_delay=0), call, sleep=lambda _: None)
        assert result.text == "ok"
        assert len(calls) == 1

    def test_fails_twice_then_succeeds(self):
        # Counter oracle: the injected fake counts attempts.
        attempts = []

        def call():
            attempts.append(1)
            if len(attempts) < 3:
                raise TransportError("flaky")
            return ChatResponse(text="ok")

        result = with_retry(RetryPolicy(max_attempts=5, base_delay=0), call, sleep=lambda _: None)
        assert result.text == "ok"
        assert len(attempts) == 3

    def test_non_retryable_single_call(self):
        attempts = []

        def call():
            attempts.append(1)
            raise BackendError("fatal")

        with pytest.raises(BackendError):
            with_retry(RetryPolicy(max_attempts=4, base_delay=0), call, sleep=lambda _: None)
        assert len(attempts) == 1

    def test_exhausts_attempts(self):
        attempts = []

        def call():
            attempts.append(1)
            raise RateLimited("slow down")

        with pytest.raises(RateLimited):
            with_retry(RetryPolicy(max_attempts=4, base_delay=0), call, sleep=lambda _: None)
        assert len(attempts) == 4

    def test_backoff_doubles(self):
        delays = []

        def call():
            raise TransportError("x")

        with pytest.raises(TransportError):
            with_retry(
                RetryPolicy(max_attempts=4, base_delay=1.0), call, sleep=delays.append
            )
        assert delays == [1.0, 2.0, 4.0]


class _FakeHttpResponse:
    def __init__(self, status_code=200, body=None, text=""):
        self.status_code = status_code
        self._body = body or {}
        self.text = text

    def json(self):
        return self._body


class _FakeSession:
    def __init__(self, responses):
        self.responses = list(responses)
        self.calls = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls.append({"url": url, "json": json, "headers": headers})
        item = self.responses.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


class TestHttpBackend:
    def test_payload_and_parse(self):
        session = _FakeSession(
            [
                _FakeHttpResponse(
                    200,
                    {
                        "choices": [{"message": {"content": "answer"}}],
                        "usage": {"prompt_tokens": 7, "completion_tokens": 2},
                    },
                )
            ]
        )
        backend = HttpBackend("http://example.test/v1", api_key="k", model="m", session=session)
        request = ChatRequest(
            messages=[Message("system", "sys"), Message("user", "q")],
            purpose=Purpose.LOSS,
            temperature=0.0,
            max_tokens=64,
        )
        response = backend.complete(request)
        assert response.text == "answer"
        assert response.prompt_tokens == 7
        call = session.calls[0]
        assert call["url"] == "http://example.test/v1/chat/completions"
        assert call["json"]["model"] == "m"
        assert call["json"]["messages"][0] == {"role": "system", "content": "sys"}
        assert call["headers"]["Authorization"] == "Bearer k"
        assert len(backend.transcript) == 1

    def test_rate_limit_retried_then_ok(self):
        session = _FakeSession(
            [
                _FakeHttpResponse(429, text="slow down"),
                _FakeHttpResponse(200, {"choices": [{"message": {"content": "ok"}}]}),
            ]
        )
        backend = HttpBackend(
            "http://example.test",
            session=session,
            retry_policy=RetryPolicy(max_attempts=3, base_delay=0),
        )
        assert backend.complete(_req()).text == "ok"
        assert len(session.calls) == 2

    def test_server_error_is_transport_error(self):
        session = _FakeSession([_FakeHttpResponse(500, text="boom")])
        backend = HttpBackend(
            "http://example.test",
            session=session,
            retry_policy=RetryPolicy(max_attempts=1, base_delay=0),
        )
        with pytest.raises(TransportError):
            backend.complete(_req())

    def test_client_error_not_retryable(self):
        session = _FakeSession([_FakeHttpResponse(400, text="bad request")])
        backend = HttpBackend(
            "http://example.test",
            session=session,
            retry_policy=RetryPolicy(max_attempts=3, base_delay=0),
        )
        with pytest.raises(BackendError):
            backend.complete(_req())
        assert len(session.calls) == 1


def test_default_temperatures():
    assert default_temperature(Purpose.LOSS) == 0.0
    assert default_temperature(Purpose.OPTIMIZER_PROMPT) == 0.0
    assert default_temperature(Purpose.AGENT_FORWARD, forward_temperature=0.7) == 0.7
    assert default_temperature(Purpose.ROUTING, forward_temperature=0.3) == 0.3


def test_transcript_records_shape():
    backend = match_any(rule("pong"))
    backend.complete(_req("ping", Purpose.ROUTING))
    records = transcript_records(backend)
    assert len(records) == 1
    assert records[0]["purpose_tag"] == "routing"
    assert records[0]["response"] == "pong"
    assert len(records[0]["request_hash"]) == 64
