"""Run configuration: a YAML file layered under flags, layered under env vars.

Precedence when the same knob is set in several places: environment
variables win over command-line flags, which win over the config file.
Backend credentials only ever come from the environment.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .backends import (
    Backend,
    HttpBackend,
    ROLES,
    backend_from_env,
    env_backend_configured,
    scripted_backend_from_file,
)
from .chain import DEFAULT_T_MAX
from .errors import ConfigError
from .rag import DEFAULT_RETRIEVAL_K

DEFAULT_CORPUS_RANGE = (48_000, 58_000)


@dataclass
class BackendSpec:
    """Declarative backend description from the config file."""

    type: str  # "http" or "scripted"
    base_url: str = ""
    model: str = ""
    temperature: float = 0.0
    max_output_tokens: int = 1024
    timeout: float = 60.0
    max_attempts: int = 3
    backoff: float = 0.5
    max_concurrency: int = 4
    script: str = ""
    exhaustion: str = "error"

    def validate(self, role: str, base_dir: Path) -> list[str]:
        problems = []
        if self.type not in ("http", "scripted"):
            problems.append(f"backend {role}: unknown type {self.type!r}")
        elif self.type == "http":
            if not self.base_url or not self.model:
                problems.append(f"backend {role}: http backends need base_url and model")
        else:
            if not self.script:
                problems.append(f"backend {role}: scripted backends need a script path")
            elif not (base_dir / self.script).exists():
                problems.append(f"backend {role}: script not found: {base_dir / self.script}")
            if self.exhaustion not in ("error", "repeat-last"):
                problems.append(f"backend {role}: exhaustion must be error or repeat-last")
        return problems


@dataclass
class RunConfig:
    t_max: int = DEFAULT_T_MAX
    retrieval_k: int = DEFAULT_RETRIEVAL_K
    corpus_low: int = DEFAULT_CORPUS_RANGE[0]
    corpus_high: int = DEFAULT_CORPUS_RANGE[1]
    seed: int = 0
    workers: int = 0  # 0 means use the CPU count
    backends: dict[str, BackendSpec] = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    def validate(self) -> list[str]:
        problems = []
        if self.t_max < 1:
            problems.append("t_max must be at least 1")
        if self.retrieval_k < 1:
            problems.append("retrieval_k must be at least 1")
        if not (0 < self.corpus_low <= self.corpus_high):
            problems.append("corpus token range must satisfy 0 < low <= high")
        if self.workers < 0:
            problems.append("workers must be non-negative")
        for role, spec in self.backends.items():
            if role.upper() not in ROLES:
                problems.append(f"unknown backend role {role!r}; expected one of {ROLES}")
                continue
            problems.extend(spec.validate(role, self.base_dir))
        return problems

    def effective_workers(self) -> int:
        if self.workers:
            return self.workers
        return os.cpu_count() or 1


def _coerce_spec(role: str, payload: dict) -> BackendSpec:
    if not isinstance(payload, dict):
        raise ConfigError(f"backend {role}: expected a mapping")
    known = {f for f in BackendSpec.__dataclass_fields__}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"backend {role}: unknown keys {sorted(unknown)}")
    if "type" not in payload:
        raise ConfigError(f"backend {role}: missing 'type'")
    return BackendSpec(**payload)


def load_run_config(path: str | Path | None) -> RunConfig:
    """Load the config file; a missing path yields pure defaults."""
    if path is None:
        return RunConfig()
    source = Path(path)
    if not source.exists():
        raise ConfigError(f"config file not found: {source}")
    try:
        payload: Any = yaml.safe_load(source.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {source} is not valid YAML: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"config file {source} must hold a mapping")
    config = RunConfig(base_dir=source.resolve().parent)
    corpus = payload.pop("corpus_tokens", None)
    if corpus is not None:
        try:
            config.corpus_low = int(corpus["low"])
            config.corpus_high = int(corpus["high"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"corpus_tokens must map low and high to integers: {exc}") from exc
    backends = payload.pop("backends", {}) or {}
    config.backends = {
        role.lower(): _coerce_spec(role, spec) for role, spec in backends.items()
    }
    for key in ("t_max", "retrieval_k", "seed", "workers"):
        if key in payload:
            try:
                setattr(config, key, int(payload.pop(key)))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"config key {key} must be an integer: {exc}") from exc
    if payload:
        raise ConfigError(f"unknown config keys: {sorted(payload)}")
    return config


def build_backend(config: RunConfig, role: str) -> Backend:
    """Resolve a role to a backend: env vars first, then the config file."""
    role = role.lower()
    if env_backend_configured(role):
        return backend_from_env(role)
    spec = config.backends.get(role)
    if spec is None:
        raise ConfigError(
            f"no backend for role {role!r}: set REARAG_{role.upper()}_BASE_URL and "
            f"REARAG_{role.upper()}_MODEL, or add it to the config file"
        )
    if spec.type == "scripted":
        return scripted_backend_from_file(
            config.base_dir / spec.script, exhaustion=spec.exhaustion
        )
    api_key = os.environ.get(f"REARAG_{role.upper()}_API_KEY", "")
    return HttpBackend(
        base_url=spec.base_url,
        model=spec.model,
        api_key=api_key,
        temperature=spec.temperature,
        max_output_tokens=spec.max_output_tokens,
        timeout=spec.timeout,
        max_attempts=spec.max_attempts,
        backoff=spec.backoff,
        max_concurrency=spec.max_concurrency,
    )


def uses_scripted_backend(config: RunConfig, roles: list[str]) -> bool:
    return any(
        config.backends.get(role.lower()) is not None
        and config.backends[role.lower()].type == "scripted"
        and not env_backend_configured(role)
        for role in roles
    )
