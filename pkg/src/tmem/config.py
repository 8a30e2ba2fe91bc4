"""Runtime settings from environment variables and an optional JSON file.

Every setting ``name`` can be given as ``TMEM_<NAME>`` in the environment or
as a key in the JSON file named by ``TMEM_CONFIG``; the environment wins.
"""

from __future__ import annotations

import json
import os
from collections.abc import Mapping
from enum import Enum
from pathlib import Path
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from tmem import errors
from tmem.gateway import Gateway, HashingEmbedder, HttpEmbedder, LiveProvider, ScriptedProvider
from tmem.models import Clock, fixed_clock, utc_now


class ProviderKind(str, Enum):
    SCRIPTED = "scripted"
    HEURISTIC = "heuristic"
    LIVE = "live"


class EmbedderKind(str, Enum):
    HASHING = "hashing"
    HTTP = "http"


class Settings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    store: Optional[Path] = None
    provider: ProviderKind = ProviderKind.SCRIPTED
    fixture: Optional[Path] = None
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4.1"
    # name of the environment variable holding the API key
    api_key_var: str = "OPENAI_API_KEY"
    role_models: dict[str, str] = Field(default_factory=dict)
    embedder: EmbedderKind = EmbedderKind.HASHING
    embed_model: str = "text-embedding-3-small"
    embed_dim: int = Field(256, gt=0)
    rate_limit: Optional[float] = Field(None, gt=0)
    timeout: float = Field(60.0, gt=0)
    max_retries: int = Field(2, ge=0)
    step_cap: int = Field(30, ge=1)
    threshold: float = Field(0.85, gt=0, le=1)
    cluster_task_tips: bool = True
    llm_tau_floor: bool = True
    checkpoint_every: int = Field(100, ge=0)
    # fixed timestamp for reproducible runs; unset means the wall clock
    clock: Optional[str] = None
    host: str = "127.0.0.1"
    port: int = 8765
    workers: int = Field(2, ge=1)

    @classmethod
    def load(cls, env: Mapping[str, str] | None = None, **overrides: Any) -> Settings:
        env = os.environ if env is None else env
        data: dict[str, Any] = {}
        path = env.get("TMEM_CONFIG")
        if path:
            try:
                data.update(json.loads(Path(path).read_text(encoding="utf-8")))
            except OSError as exc:
                raise errors.StoreIoError(f"cannot read config {path}: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise errors.ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        for name in cls.model_fields:
            value = env.get(f"TMEM_{name.upper()}")
            if value is not None and value != "":
                data[name] = json.loads(value) if name == "role_models" else value
        data.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls.model_validate(data)
        except ValidationError as exc:
            raise errors.ConfigError(str(exc)) from exc

    def make_clock(self) -> Clock:
        return fixed_clock(self.clock) if self.clock else utc_now

    def make_gateway(self) -> Gateway:
        if self.embedder is EmbedderKind.HASHING:
            embedder = HashingEmbedder(self.embed_dim)
        else:
            embedder = HttpEmbedder(
                base_url=self.base_url,
                model=self.embed_model,
                dim=self.embed_dim,
                api_key=os.environ.get(self.api_key_var),
                timeout=self.timeout,
            )
        if self.provider is ProviderKind.LIVE:
            api_key = os.environ.get(self.api_key_var)
            if not api_key:
                raise errors.ConfigError(f"live provider needs an API key in ${self.api_key_var}")
            provider: Any = LiveProvider(
                base_url=self.base_url,
                model=self.model,
                api_key=api_key,
                timeout=self.timeout,
                role_models=self.role_models,
            )
        elif self.provider is ProviderKind.HEURISTIC:
            from tmem.gateway.heuristic import HeuristicResponder

            provider = ScriptedProvider(responder=HeuristicResponder())
        else:
            # without a fixture every completion misses, which surfaces as a gateway error
            provider = ScriptedProvider.from_file(self.fixture) if self.fixture else ScriptedProvider()
        return Gateway(provider, embedder, max_retries=self.max_retries, rate_limit=self.rate_limit)
