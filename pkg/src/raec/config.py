"""Service and pipeline configuration.

One static JSON file, environment-variable overrides for secrets
(RAEC_LLM_API_TOKEN, RAEC_EMBED_API_TOKEN, RAEC_SERVICE_TOKEN), and CLI
flags override both.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Union

from .embedding import EmbedderConfig
from .errors import ConfigError
from .llm import LLMConfig

ENV_LLM_TOKEN = "RAEC_LLM_API_TOKEN"
ENV_EMBED_TOKEN = "RAEC_EMBED_API_TOKEN"
ENV_SERVICE_TOKEN = "RAEC_SERVICE_TOKEN"


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    mode_default: str = "baseline"
    k: int = 5
    taxonomy_path: str = ""
    index_path: str = ""
    relax_filters: bool = False
    fail_hard_on_retrieval_error: bool = False
    request_timeout_s: float = 30.0
    include_timings: bool = False
    service_token: str = ""
    llm: LLMConfig = field(default_factory=LLMConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigError(f"retrieval k must be >= 1, got {self.k}")
        if self.mode_default not in ("baseline", "enhanced"):
            raise ConfigError(f"mode_default must be baseline or enhanced, got {self.mode_default!r}")


def _apply_env(config: ServiceConfig) -> ServiceConfig:
    llm = config.llm
    if os.environ.get(ENV_LLM_TOKEN):
        llm = replace(llm, api_token=os.environ[ENV_LLM_TOKEN])
    embedder = config.embedder
    if os.environ.get(ENV_EMBED_TOKEN):
        embedder = replace(embedder, auth_token=os.environ[ENV_EMBED_TOKEN])
    token = os.environ.get(ENV_SERVICE_TOKEN, config.service_token)
    return replace(config, llm=llm, embedder=embedder, service_token=token)


def load_config(path: Union[str, Path, None] = None) -> ServiceConfig:
    """Read the config file (or defaults) and apply environment overrides."""
    if path is None:
        return _apply_env(ServiceConfig())
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    try:
        llm = LLMConfig(**doc.pop("llm", {}))
        embedder = EmbedderConfig(**doc.pop("embedder", {}))
        config = ServiceConfig(llm=llm, embedder=embedder, **doc)
    except TypeError as exc:
        raise ConfigError(f"config {path}: unknown or missing field: {exc}") from exc
    return _apply_env(config)
