"""Completion-style language model gateway.

One wire client for any completion HTTP endpoint plus deterministic offline
backends. The safe entry point is :func:`complete`, which never lets a
backend failure escape: errors come back as results with
``finish_reason == "error"`` and the pipeline turns those into empty-change
predictions.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass

import requests

DEFAULT_STOP_SEQUENCES = ("--", "\n\n", "Example")
DEFAULT_MAX_COMPLETION_UNITS = 120

ENV_URL = "SQLDST_LM_URL"
ENV_TOKEN = "SQLDST_LM_TOKEN"
ENV_MODEL = "SQLDST_LM_MODEL"


class LmError(Exception):
    pass


class RetriesExhausted(LmError):
    pass


class ScriptedMiss(LmError):
    pass


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    max_completion_units: int = DEFAULT_MAX_COMPLETION_UNITS
    temperature: float = 0.0
    stop_sequences: tuple[str, ...] = DEFAULT_STOP_SEQUENCES

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_completion_units <= 0:
            raise ValueError("max_completion_units must be > 0")
        if len(self.stop_sequences) > 4:
            raise ValueError("at most 4 stop sequences")


@dataclass(frozen=True)
class CompletionResult:
    text: str
    finish_reason: str  # "stop", "length", or "error"
    latency_ms: int = 0
    error: str | None = None


def default_request(prompt: str) -> CompletionRequest:
    """Greedy decoding: temperature 0, one SQL statement's worth of budget."""
    return CompletionRequest(prompt=prompt)


def prompt_sha256(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ScriptedBackend:
    """Fixture-table backend keyed by prompt content hash; read-only after load."""

    def __init__(self, table: dict[str, str]):
        self.table = dict(table)

    @classmethod
    def from_file(cls, path) -> "ScriptedBackend":
        table = {}
        with open(path, encoding="utf-8") as f:
            for line in f:
                if not line.strip():
                    continue
                rec = json.loads(line)
                table[rec["prompt_sha256"]] = rec["completion"]
        return cls(table)

    @classmethod
    def from_prompts(cls, completions: dict[str, str]) -> "ScriptedBackend":
        return cls({prompt_sha256(p): c for p, c in completions.items()})

    def generate(self, req: CompletionRequest) -> CompletionResult:
        key = prompt_sha256(req.prompt)
        if key not in self.table:
            raise ScriptedMiss(f"no scripted completion for prompt hash {key[:12]}...")
        return CompletionResult(text=self.table[key], finish_reason="stop")


class EchoBackend:
    """Returns a constant completion regardless of the prompt."""

    def __init__(self, text: str):
        self.text = text

    def generate(self, req: CompletionRequest) -> CompletionResult:
        return CompletionResult(text=self.text, finish_reason="stop")


_TRANSIENT_STATUS = {429, 500, 502, 503, 504}


class HttpBackend:
    """POST {prompt, max_tokens, temperature, stop} to a completions URL.

    Retries transient failures (timeouts, connection errors, rate limits)
    with exponential backoff: base 1s, factor 2, at most 5 attempts. At most
    ``max_parallel`` requests are in flight at once.
    """

    def __init__(self, url: str | None = None, token: str | None = None,
                 model: str | None = None, *, timeout: float = 60.0,
                 max_attempts: int = 5, backoff_base: float = 1.0,
                 backoff_factor: float = 2.0, max_parallel: int = 4,
                 post=requests.post, sleep=time.sleep):
        self.url = url or os.environ.get(ENV_URL)
        if not self.url:
            raise LmError(f"no completions URL (set {ENV_URL})")
        self.token = token if token is not None else os.environ.get(ENV_TOKEN)
        self.model = model if model is not None else os.environ.get(ENV_MODEL)
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_factor = backoff_factor
        self._post = post
        self._sleep = sleep
        self._slots = threading.Semaphore(max_parallel)

    def generate(self, req: CompletionRequest) -> CompletionResult:
        payload = {
            "prompt": req.prompt,
            "max_tokens": req.max_completion_units,
            "temperature": req.temperature,
            "stop": list(req.stop_sequences),
        }
        if self.model:
            payload["model"] = self.model
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        delay = self.backoff_base
        last_error = None
        for attempt in range(self.max_attempts):
            if attempt:
                self._sleep(delay)
                delay *= self.backoff_factor
            start = time.monotonic()
            try:
                with self._slots:
                    resp = self._post(self.url, json=payload, headers=headers,
                                      timeout=self.timeout)
            except (requests.Timeout, requests.ConnectionError) as e:
                last_error = f"{type(e).__name__}: {e}"
                continue
            latency = int((time.monotonic() - start) * 1000)
            if resp.status_code in _TRANSIENT_STATUS:
                last_error = f"HTTP {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise LmError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            choice = resp.json()["choices"][0]
            text = choice.get("text", "")
            if text.startswith(req.prompt):  # guard against prompt-echoing servers
                text = text[len(req.prompt):]
            return CompletionResult(
                text=text,
                finish_reason=choice.get("finish_reason", "stop"),
                latency_ms=latency,
            )
        raise RetriesExhausted(
            f"gave up after {self.max_attempts} attempts; last error: {last_error}")


def complete(backend, req: CompletionRequest) -> CompletionResult:
    """Run one completion; failures surface as error results, never exceptions."""
    start = time.monotonic()
    try:
        return backend.generate(req)
    except LmError as e:
        latency = int((time.monotonic() - start) * 1000)
        return CompletionResult(text="", finish_reason="error",
                                latency_ms=latency, error=f"{type(e).__name__}: {e}")


def make_backend(kind: str, *, scripted_path=None, echo_text: str = "",
                 url=None, token=None, model=None):
    """Backend factory used by the CLI: "scripted", "echo", or "http"."""
    if kind == "scripted":
        if scripted_path is None:
            raise ValueError("scripted backend needs a fixtures file")
        return ScriptedBackend.from_file(scripted_path)
    if kind == "echo":
        return EchoBackend(echo_text)
    if kind == "http":
        return HttpBackend(url=url, token=token, model=model)
    raise ValueError(f"unknown backend kind: {kind}")
