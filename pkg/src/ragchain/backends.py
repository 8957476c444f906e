"""Chat-completion backends: a thin HTTP client plus a scripted test double.

Every backend exposes complete(conversation) -> text over chat-style
message lists. Credentials come from environment variables only, per
role: REARAG_<ROLE>_BASE_URL / _API_KEY / _MODEL.
"""
from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import requests

from .chain import Message
from .errors import ConfigError, RagchainError

log = logging.getLogger(__name__)

ROLES = ("LRM", "REARAG", "ANS", "JUDGE", "GEN")


class BackendError(RagchainError):
    pass


class TransportError(BackendError):
    """Network-level failure after exhausting the retry policy."""


class CompletionTimeout(TransportError):
    pass


class BackendRefusal(BackendError):
    """Non-success HTTP status; body preserved for diagnostics."""

    def __init__(self, status: int, body: str):
        super().__init__(f"backend refused with status {status}: {body[:500]}")
        self.status = status
        self.body = body


class ScriptExhausted(BackendError):
    pass


class Backend(Protocol):
    def complete(self, conversation: Sequence[Message]) -> str: ...


def _validate_conversation(conversation: Sequence[Message]) -> None:
    if not conversation:
        raise ValueError("conversation must be non-empty")
    if conversation[0].get("role") != "system":
        raise ValueError("first message must be a system instruction")


def complete(backend: Backend, conversation: Sequence[Message]) -> str:
    """Run one completion against a backend after validating the conversation."""
    _validate_conversation(conversation)
    return backend.complete(list(conversation))


def _extract_completion(payload: dict) -> str:
    choices = payload.get("choices")
    if isinstance(choices, list) and choices:
        first = choices[0]
        message = first.get("message")
        if isinstance(message, dict) and isinstance(message.get("content"), str):
            return message["content"]
        if isinstance(first.get("text"), str):
            return first["text"]
    raise TransportError(f"backend response carries no completion text: {str(payload)[:300]}")


@dataclass
class HttpBackend:
    """Chat-completion client with bounded retries and a concurrency cap."""

    base_url: str
    model: str
    api_key: str = ""
    temperature: float = 0.0
    max_output_tokens: int = 1024
    timeout: float = 60.0
    max_attempts: int = 3
    backoff: float = 0.5
    max_concurrency: int = 4
    _gate: threading.Semaphore = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        self._gate = threading.Semaphore(self.max_concurrency)

    @property
    def endpoint(self) -> str:
        base = self.base_url.rstrip("/")
        return base if base.endswith("/chat/completions") else f"{base}/chat/completions"

    def complete(self, conversation: Sequence[Message]) -> str:
        payload = {
            "model": self.model,
            "messages": list(conversation),
            "temperature": self.temperature,
            "max_tokens": self.max_output_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        failure: BackendError | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            try:
                with self._gate:
                    response = requests.post(
                        self.endpoint, json=payload, headers=headers, timeout=self.timeout
                    )
            except requests.Timeout as exc:
                failure = CompletionTimeout(f"request to {self.endpoint} timed out: {exc}")
                continue
            except requests.RequestException as exc:
                failure = TransportError(f"request to {self.endpoint} failed: {exc}")
                continue
            if response.status_code == 200:
                try:
                    body = response.json()
                except ValueError as exc:
                    raise TransportError(f"backend returned non-JSON body: {exc}") from exc
                return _extract_completion(body)
            refusal = BackendRefusal(response.status_code, response.text)
            if response.status_code == 429 or response.status_code >= 500:
                failure = refusal
                continue
            raise refusal
        assert failure is not None
        raise failure


@dataclass(frozen=True)
class ScriptEntry:
    """One canned completion, gated on a regex over the last user message."""

    match: str
    completion: str

    def matches(self, last_user_message: str) -> bool:
        if self.match == "*":
            return True
        return re.search(self.match, last_user_message) is not None


class ScriptedBackend:
    """Deterministic offline backend. Entries are consumed in order: each call
    takes the first unconsumed entry whose predicate matches the last user
    message. On exhaustion it either errors or repeats the final entry."""

    def __init__(
        self,
        entries: Iterable[ScriptEntry | tuple[str, str]],
        exhaustion: str = "error",
        name: str = "scripted",
    ):
        if exhaustion not in ("error", "repeat-last"):
            raise ValueError("exhaustion must be 'error' or 'repeat-last'")
        self.entries = tuple(
            e if isinstance(e, ScriptEntry) else ScriptEntry(*e) for e in entries
        )
        self.exhaustion = exhaustion
        self.name = name
        self._consumed = [False] * len(self.entries)
        self._lock = threading.Lock()

    def reset(self) -> None:
        with self._lock:
            self._consumed = [False] * len(self.entries)

    def complete(self, conversation: Sequence[Message]) -> str:
        _validate_conversation(conversation)
        last_user = next(
            (m.get("content", "") for m in reversed(conversation) if m.get("role") == "user"),
            "",
        )
        with self._lock:
            for i, entry in enumerate(self.entries):
                if self._consumed[i]:
                    continue
                if entry.matches(last_user):
                    self._consumed[i] = True
                    return entry.completion
            if self.exhaustion == "repeat-last" and self.entries:
                return self.entries[-1].completion
        raise ScriptExhausted(
            f"script {self.name!r} has no unconsumed entry matching {last_user[:120]!r}"
        )


def scripted_backend_from_file(path: str | Path, exhaustion: str = "error") -> ScriptedBackend:
    """Load a script from JSONL lines of {"match": regex-or-"*", "completion": text}."""
    entries = []
    source = Path(path)
    for lineno, line in enumerate(source.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        record = json.loads(line)
        try:
            entries.append(ScriptEntry(match=record["match"], completion=record["completion"]))
        except KeyError as exc:
            raise ConfigError(f"{source}:{lineno}: script entry missing key {exc}") from exc
    return ScriptedBackend(entries, exhaustion=exhaustion, name=source.name)


def env_var(role: str, suffix: str) -> str:
    return f"REARAG_{role.upper()}_{suffix}"


def backend_from_env(role: str, **overrides) -> HttpBackend:
    """Build an HTTP backend for a role from REARAG_<ROLE>_* environment variables."""
    if role.upper() not in ROLES:
        raise ConfigError(f"unknown backend role {role!r}; expected one of {ROLES}")
    base_url = os.environ.get(env_var(role, "BASE_URL"), "")
    model = os.environ.get(env_var(role, "MODEL"), "")
    api_key = os.environ.get(env_var(role, "API_KEY"), "")
    if not base_url or not model:
        raise ConfigError(
            f"role {role}: set {env_var(role, 'BASE_URL')} and {env_var(role, 'MODEL')}"
        )
    return HttpBackend(base_url=base_url, model=model, api_key=api_key, **overrides)


def env_backend_configured(role: str) -> bool:
    return bool(
        os.environ.get(env_var(role, "BASE_URL")) and os.environ.get(env_var(role, "MODEL"))
    )


@dataclass
class EmbeddingBackend:
    """Client for an embeddings endpoint; used by the optional remote retriever."""

    base_url: str
    model: str
    api_key: str = ""
    timeout: float = 60.0

    @property
    def endpoint(self) -> str:
        base = self.base_url.rstrip("/")
        return base if base.endswith("/embeddings") else f"{base}/embeddings"

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = requests.post(
                self.endpoint,
                json={"model": self.model, "input": list(texts)},
                headers=headers,
                timeout=self.timeout,
            )
        except requests.Timeout as exc:
            raise CompletionTimeout(f"embedding request timed out: {exc}") from exc
        except requests.RequestException as exc:
            raise TransportError(f"embedding request failed: {exc}") from exc
        if response.status_code != 200:
            raise BackendRefusal(response.status_code, response.text)
        data = response.json().get("data")
        if not isinstance(data, list) or len(data) != len(texts):
            raise TransportError("embedding response shape mismatch")
        return [entry["embedding"] for entry in data]


EmbedFn = Callable[[Sequence[str]], list[list[float]]]
