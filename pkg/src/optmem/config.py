"""Run configuration: hyperparameters, provider endpoints, executor policy.

Config files are flat ``key = value`` lines (``#`` starts a comment). Keys
mirror the dataclass fields below; provider fields are dotted, e.g.
``chat.model = qwen3-8b``. Credentials never live in files: the gateway
reads OPTMEM_API_KEY / OPTMEM_EMBED_API_KEY from the environment.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping


class ConfigError(ValueError):
    pass


@dataclass
class ProviderConfig:
    """How to reach one chat or embedding backend."""

    endpoint: str = ""
    model: str = "mock-model"
    temperature: float = 0.0
    max_output_tokens: int = 2048
    request_timeout: float = 60.0
    retry_count: int = 2
    rate_limit_per_second: float = 0.0  # 0 disables the token bucket

    def validate(self) -> None:
        if self.retry_count < 0:
            raise ConfigError("retry_count must be >= 0")
        if self.request_timeout <= 0:
            raise ConfigError("request_timeout must be positive")


@dataclass
class Config:
    """Framework knobs with the adopted defaults."""

    retrieval_top_k: int = 3
    knowledge_update_threshold: int = 5
    max_paths: int = 3
    repair_limit: int = 2
    exec_timeout_seconds: float = 60.0
    max_classification_rounds: int = 3
    numeric_rel_tolerance: float = 1e-4
    embedding_dim: int = 32
    seed: int = 7
    provider: str = "mock"  # "mock" or "http"
    workers: int = 1
    chat: ProviderConfig = field(default_factory=lambda: ProviderConfig(model="mock-chat"))
    embed: ProviderConfig = field(default_factory=lambda: ProviderConfig(model="mock-embed"))
    harness_cmd: str = ""  # e.g. "python -m solver_harness"

    def validate(self) -> None:
        for name in ("retrieval_top_k", "knowledge_update_threshold", "max_paths",
                     "max_classification_rounds", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.repair_limit < 0:
            raise ConfigError("repair_limit must be >= 0")
        if self.exec_timeout_seconds <= 0:
            raise ConfigError("exec_timeout_seconds must be positive")
        if self.numeric_rel_tolerance <= 0:
            raise ConfigError("numeric_rel_tolerance must be positive")
        if self.embedding_dim < 1:
            raise ConfigError("embedding_dim must be >= 1")
        if self.provider not in ("mock", "http"):
            raise ConfigError(f"unknown provider kind: {self.provider!r}")
        self.chat.validate()
        self.embed.validate()

    def hyperparameter_snapshot(self) -> dict[str, float]:
        """The knobs recorded in a store manifest at build time."""
        return {
            "retrieval_top_k": self.retrieval_top_k,
            "knowledge_update_threshold": self.knowledge_update_threshold,
            "max_paths": self.max_paths,
            "repair_limit": self.repair_limit,
            "exec_timeout_seconds": self.exec_timeout_seconds,
            "max_classification_rounds": self.max_classification_rounds,
            "numeric_rel_tolerance": self.numeric_rel_tolerance,
        }


_INT_FIELDS = {"retrieval_top_k", "knowledge_update_threshold", "max_paths",
               "repair_limit", "max_classification_rounds", "embedding_dim",
               "seed", "workers"}
_FLOAT_FIELDS = {"exec_timeout_seconds", "numeric_rel_tolerance"}
_STR_FIELDS = {"provider", "harness_cmd"}

_PROVIDER_INT = {"max_output_tokens", "retry_count"}
_PROVIDER_FLOAT = {"temperature", "request_timeout", "rate_limit_per_second"}
_PROVIDER_STR = {"endpoint", "model"}


def parse_config_text(text: str, base: Config | None = None) -> Config:
    cfg = dataclasses.replace(base) if base is not None else Config()
    # replace() shares nested dataclasses; give this config its own copies
    cfg.chat = dataclasses.replace(cfg.chat)
    cfg.embed = dataclasses.replace(cfg.embed)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        apply_setting(cfg, key.strip(), value.strip())
    return cfg


def load_config(path: str | Path, base: Config | None = None) -> Config:
    cfg = parse_config_text(Path(path).read_text(encoding="utf-8"), base=base)
    cfg.validate()
    return cfg


def apply_setting(cfg: Config, key: str, value: str) -> None:
    """Apply one ``key = value`` setting, including dotted provider keys."""
    if "." in key:
        prefix, _, sub = key.partition(".")
        if prefix not in ("chat", "embed"):
            raise ConfigError(f"unknown config section {prefix!r}")
        target: ProviderConfig = getattr(cfg, prefix)
        if sub in _PROVIDER_INT:
            setattr(target, sub, _to_int(key, value))
        elif sub in _PROVIDER_FLOAT:
            setattr(target, sub, _to_float(key, value))
        elif sub in _PROVIDER_STR:
            setattr(target, sub, value)
        else:
            raise ConfigError(f"unknown config key {key!r}")
        return
    if key in _INT_FIELDS:
        setattr(cfg, key, _to_int(key, value))
    elif key in _FLOAT_FIELDS:
        setattr(cfg, key, _to_float(key, value))
    elif key in _STR_FIELDS:
        setattr(cfg, key, value)
    else:
        raise ConfigError(f"unknown config key {key!r}")


def apply_overrides(cfg: Config, overrides: Mapping[str, str]) -> Config:
    for key, value in overrides.items():
        apply_setting(cfg, key, value)
    cfg.validate()
    return cfg


def _to_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError as exc:
        raise ConfigError(f"{key} expects an integer, got {value!r}") from exc


def _to_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError as exc:
        raise ConfigError(f"{key} expects a number, got {value!r}") from exc
