import json

import pytest

from sqldst.lm import (CompletionRequest, EchoBackend, HttpBackend,
                       LmError, RetriesExhausted, ScriptedBackend, ScriptedMiss,
                       complete, default_request, make_backend, prompt_sha256)


def test_default_request_settings():
    req = default_request("p")
    assert req.temperature == 0.0
    assert req.max_completion_units == 120
    assert req.stop_sequences == ("--", "\n\n", "Example")
    assert len(req.stop_sequences) == 3


def test_request_invariants():
    with pytest.raises(ValueError):
        CompletionRequest("p", temperature=-0.1)
    with pytest.raises(ValueError):
        CompletionRequest("p", max_completion_units=0)
    with pytest.raises(ValueError):
        CompletionRequest("p", stop_sequences=("a", "b", "c", "d", "e"))


def test_scripted_backend_hit(data_dir):
    backend = ScriptedBackend.from_file(data_dir / "scripted_completions.jsonl")
    prompt = (data_dir / "prompt_fewshot_sql.txt").read_text()
    result = complete(backend, default_request(prompt))
    assert result.text == " attraction WHERE name = cambridge artworks"
    assert result.finish_reason == "stop"


def test_scripted_backend_miss():
    backend = ScriptedBackend({})
    with pytest.raises(ScriptedMiss):
        backend.generate(default_request("unknown"))
    result = complete(backend, default_request("unknown"))
    assert result.finish_reason == "error"
    assert "ScriptedMiss" in result.error


def test_scripted_from_prompts():
    backend = ScriptedBackend.from_prompts({"the prompt": " the completion"})
    assert backend.generate(default_request("the prompt")).text == " the completion"


def test_scripted_deterministic(data_dir):
    backend = ScriptedBackend.from_file(data_dir / "scripted_completions.jsonl")
    prompt = (data_dir / "prompt_zeroshot_sql.txt").read_text()
    first = complete(backend, default_request(prompt))
    second = complete(backend, default_request(prompt))
    assert first.text == second.text == (" taxi WHERE departure = saint john s college "
                                         "AND destination = pizza hut fen ditton")


def test_echo_backend_constant():
    backend = EchoBackend(" none;")
    for prompt in ("a", "b", "c"):
        assert complete(backend, default_request(prompt)).text == " none;"


class FakeResponse:
    def __init__(self, status_code, body=None, text=""):
        self.status_code = status_code
        self._body = body or {}
        self.text = text

    def json(self):
        return self._body


def http_backend(post, **kw):
    sleeps = []
    backend = HttpBackend(url="http://lm.test/v1/completions", token="tok", model="m",
                          post=post, sleep=sleeps.append, **kw)
    return backend, sleeps


def test_http_success_payload():
    calls = []

    def post(url, json=None, headers=None, timeout=None):
        calls.append((url, json, headers))
        return FakeResponse(200, {"choices": [{"text": " hotel WHERE area = west;",
                                               "finish_reason": "stop"}]})

    backend, _ = http_backend(post)
    result = backend.generate(default_request("PROMPT"))
    assert result.text == " hotel WHERE area = west;"
    url, payload, headers = calls[0]
    assert payload == {"prompt": "PROMPT", "max_tokens": 120, "temperature": 0.0,
                       "stop": ["--", "\n\n", "Example"], "model": "m"}
    assert headers["Authorization"] == "Bearer tok"


def test_http_retries_transient_then_succeeds():
    responses = [FakeResponse(429), FakeResponse(503),
                 FakeResponse(200, {"choices": [{"text": "ok", "finish_reason": "stop"}]})]

    def post(url, **kw):
        return responses.pop(0)

    backend, sleeps = http_backend(post)
    assert backend.generate(default_request("p")).text == "ok"
    assert sleeps == [1.0, 2.0]  # exponential backoff, base 1s factor 2


def test_http_retries_exhausted():
    def post(url, **kw):
        return FakeResponse(429)

    backend, sleeps = http_backend(post)
    with pytest.raises(RetriesExhausted):
        backend.generate(default_request("p"))
    assert sleeps == [1.0, 2.0, 4.0, 8.0]  # 5 attempts, 4 waits
    result = complete(backend, default_request("p"))
    assert result.finish_reason == "error" and "RetriesExhausted" in result.error


def test_http_non_transient_fails_fast():
    calls = []

    def post(url, **kw):
        calls.append(1)
        return FakeResponse(400, text="bad request")

    backend, _ = http_backend(post)
    with pytest.raises(LmError):
        backend.generate(default_request("p"))
    assert len(calls) == 1


def test_http_strips_prompt_echo():
    def post(url, **kw):
        return FakeResponse(200, {"choices": [{"text": "PROMPT plus more",
                                               "finish_reason": "stop"}]})

    backend, _ = http_backend(post)
    assert backend.generate(default_request("PROMPT")).text == " plus more"


def test_http_requires_url(monkeypatch):
    monkeypatch.delenv("SQLDST_LM_URL", raising=False)
    with pytest.raises(LmError, match="URL"):
        HttpBackend()


def test_make_backend(data_dir, monkeypatch):
    assert isinstance(make_backend("echo", echo_text="x"), EchoBackend)
    assert isinstance(make_backend("scripted",
                                   scripted_path=data_dir / "scripted_completions.jsonl"),
                      ScriptedBackend)
    monkeypatch.setenv("SQLDST_LM_URL", "http://lm.test")
    assert isinstance(make_backend("http"), HttpBackend)
    with pytest.raises(ValueError):
        make_backend("carrier-pigeon")
    with pytest.raises(ValueError):
        make_backend("scripted")


def test_result_never_contains_prompt(data_dir):
    backend = ScriptedBackend.from_file(data_dir / "scripted_completions.jsonl")
    prompt = (data_dir / "prompt_fewshot_sql.txt").read_text()
    result = complete(backend, default_request(prompt))
    assert not result.text.startswith(prompt)


def test_prompt_sha256_stable():
    assert prompt_sha256("abc") == prompt_sha256("abc")
    assert prompt_sha256("abc") != prompt_sha256("abd")
    assert len(prompt_sha256("abc")) == 64
