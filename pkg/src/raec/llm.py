"""LLM backend contract plus the scripted and HTTP implementations.

A backend turns an ordered list of (role, content) prompt parts into a
response string. The scripted backend replays a fixture transcript keyed by
prompt digest or by call ordinal and records every call, which is what the
pipeline tests instrument; the HTTP backend speaks a minimal chat-style
JSON protocol.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence, Union

import httpx

from .errors import BackendError, BackendTimeout, ConfigError

PromptParts = Sequence[tuple[str, str]]

BACKEND_SCRIPTED = "scripted"
BACKEND_HTTP = "http"


def prompt_digest(parts: PromptParts) -> str:
    """Stable sha256 digest of an ordered prompt-part list."""
    payload = json.dumps([[role, content] for role, content in parts], ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class LLMBackend(Protocol):
    model_id: str

    def generate(self, parts: PromptParts) -> str: ...


@dataclass
class LLMConfig:
    backend: str = BACKEND_SCRIPTED
    model_id: str = "scripted"
    base_url: str = ""
    api_token: str = ""
    timeout_s: float = 60.0
    max_retries: int = 2
    max_in_flight: int = 4
    fixture_path: str = ""


class ScriptedBackend:
    """Deterministic replay backend for tests and reproducible batch runs.

    Responses come from a digest->response map when the rendered prompt's
    digest is known, otherwise from an ordered queue consumed one response
    per call. Every call is recorded in ``calls``.
    """

    def __init__(
        self,
        by_digest: dict[str, str] | None = None,
        in_order: Sequence[str] | None = None,
        model_id: str = "scripted",
    ) -> None:
        self.model_id = model_id
        self.by_digest = dict(by_digest or {})
        self.queue: list[str] = list(in_order or [])
        self._cursor = 0
        self.calls: list[dict] = []

    @classmethod
    def from_fixture(cls, path: Union[str, Path], model_id: str = "scripted") -> "ScriptedBackend":
        """Load a JSON-lines fixture: {"response": ...} consumed in order,
        or {"digest": ..., "response": ...} matched by prompt digest."""
        by_digest: dict[str, str] = {}
        in_order: list[str] = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                if "digest" in rec:
                    by_digest[rec["digest"]] = rec["response"]
                else:
                    in_order.append(rec["response"])
        return cls(by_digest=by_digest, in_order=in_order, model_id=model_id)

    @property
    def call_count(self) -> int:
        return len(self.calls)

    def generate(self, parts: PromptParts) -> str:
        digest = prompt_digest(parts)
        self.calls.append({"digest": digest, "parts": [list(p) for p in parts]})
        if digest in self.by_digest:
            return self.by_digest[digest]
        if self._cursor < len(self.queue):
            response = self.queue[self._cursor]
            self._cursor += 1
            return response
        raise BackendError(
            f"scripted backend exhausted after {self._cursor} ordinal responses "
            f"(no fixture entry for digest {digest[:12]}...)"
        )


class HTTPBackend:
    """Chat-style HTTP backend: POST {model, messages} -> {content}."""

    def __init__(self, config: LLMConfig) -> None:
        if not config.base_url:
            raise ConfigError("http backend requires a base_url")
        self.model_id = config.model_id
        self.config = config
        self._slots = threading.BoundedSemaphore(config.max_in_flight)
        headers = {}
        if config.api_token:
            headers["Authorization"] = f"Bearer {config.api_token}"
        self._client = httpx.Client(timeout=config.timeout_s, headers=headers)

    def generate(self, parts: PromptParts) -> str:
        body = {
            "model": self.model_id,
            "messages": [{"role": role, "content": content} for role, content in parts],
        }
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            try:
                with self._slots:
                    resp = self._client.post(self.config.base_url, json=body)
            except httpx.TimeoutException as exc:
                raise BackendTimeout(f"LLM backend timed out: {exc}") from exc
            except httpx.HTTPError as exc:
                last_error = exc
                time.sleep(min(2.0 ** attempt, 8.0))
                continue
            if resp.status_code >= 500:
                last_error = BackendError(f"LLM backend returned HTTP {resp.status_code}")
                time.sleep(min(2.0 ** attempt, 8.0))
                continue
            if resp.status_code != 200:
                raise BackendError(f"LLM backend returned HTTP {resp.status_code}")
            content = resp.json().get("content")
            if not isinstance(content, str):
                raise BackendError("LLM backend response missing 'content'")
            return content
        raise BackendError(f"LLM backend unreachable after retries: {last_error}")

    def close(self) -> None:
        self._client.close()


def make_backend(config: LLMConfig) -> LLMBackend:
    if config.backend == BACKEND_SCRIPTED:
        if config.fixture_path:
            return ScriptedBackend.from_fixture(config.fixture_path, model_id=config.model_id)
        return ScriptedBackend(model_id=config.model_id)
    if config.backend == BACKEND_HTTP:
        return HTTPBackend(config)
    raise ConfigError(f"unknown LLM backend: {config.backend!r}")
