"""Chat-completion providers.

A provider turns an :class:`LlmRequest` into raw response text. Parsing,
schema validation and repair retries are the gateway's job.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections.abc import Callable, Mapping
from pathlib import Path
from typing import Any, Protocol

import httpx
from pydantic import BaseModel, ConfigDict, Field, field_validator

from tmem import errors
from tmem.gateway.schemas import SCHEMAS, Role

log = logging.getLogger(__name__)

FIXTURE_FORMAT = "tmem-scripted/1"


class LlmRequest(BaseModel):
    model_config = ConfigDict(frozen=True)

    role: Role
    prompt: str
    response_schema_id: str
    temperature: float = Field(default=0.0, ge=0.0, le=2.0)
    # Structured values the prompt was rendered from. Not part of the request
    # identity; programmatic scripted responders read them instead of parsing text.
    inputs: dict[str, Any] = Field(default_factory=dict, repr=False)

    @field_validator("response_schema_id")
    @classmethod
    def _registered(cls, v: str) -> str:
        if v not in SCHEMAS:
            raise ValueError(f"unknown response schema {v!r}")
        return v

    @property
    def prompt_sha256(self) -> str:
        return prompt_hash(self.prompt)


class LlmResponse(BaseModel):
    model_config = ConfigDict(frozen=True)

    payload: dict[str, Any]
    raw: str


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class Provider(Protocol):
    # whether sending a repair instruction can change the answer
    repairable: bool

    def generate(self, request: LlmRequest) -> str: ...


Responder = Callable[[LlmRequest], Mapping[str, Any]]


class ScriptedProvider:
    """Canned payloads keyed by ``(role, sha256(prompt))``.

    Requests with no entry go to ``responder`` when one is given (it must be a
    pure function of the request) and otherwise raise :class:`ScriptedMiss`.
    """

    repairable = False

    def __init__(
        self,
        entries: Mapping[tuple[str, str], Mapping[str, Any]] | None = None,
        responder: Responder | None = None,
    ) -> None:
        self.entries = {k: dict(v) for k, v in (entries or {}).items()}
        self.responder = responder

    @classmethod
    def from_file(cls, path: str | Path, responder: Responder | None = None) -> ScriptedProvider:
        return cls(load_fixture(path), responder=responder)

    def generate(self, request: LlmRequest) -> str:
        key = (request.role.value, request.prompt_sha256)
        if key in self.entries:
            payload: Mapping[str, Any] = self.entries[key]
        elif self.responder is not None:
            payload = self.responder(request)
        else:
            raise errors.ScriptedMiss(
                f"no scripted payload for role={key[0]} prompt_sha256={key[1]}"
            )
        return json.dumps(payload, sort_keys=True, ensure_ascii=False)


def load_fixture(path: str | Path) -> dict[tuple[str, str], dict[str, Any]]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise errors.StoreIoError(f"cannot read scripted fixture {path}: {exc}") from exc
    if doc.get("format") != FIXTURE_FORMAT:
        raise errors.ConfigError(f"{path}: expected format {FIXTURE_FORMAT!r}")
    out: dict[tuple[str, str], dict[str, Any]] = {}
    for entry in doc["entries"]:
        key = (Role(entry["role"]).value, entry["prompt_sha256"])
        if key in out and out[key] != entry["payload"]:
            raise errors.ConfigError(f"{path}: conflicting payloads for {key}")
        out[key] = entry["payload"]
    return out


def dump_fixture(entries: Mapping[tuple[str, str], Mapping[str, Any]], path: str | Path) -> None:
    doc = {
        "format": FIXTURE_FORMAT,
        "entries": [
            {"role": role, "prompt_sha256": sha, "payload": entries[(role, sha)]}
            for role, sha in sorted(entries)
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


class RecordingProvider:
    """Wraps another provider and remembers every parsed payload it served."""

    def __init__(self, inner: Provider) -> None:
        self.inner = inner
        self.repairable = inner.repairable
        self.entries: dict[tuple[str, str], dict[str, Any]] = {}

    def generate(self, request: LlmRequest) -> str:
        raw = self.inner.generate(request)
        key = (request.role.value, request.prompt_sha256)
        payload = json.loads(raw)
        if key in self.entries and self.entries[key] != payload:
            raise errors.ConfigError(f"two different payloads recorded for role={key[0]} prompt_sha256={key[1]}")
        self.entries[key] = payload
        return raw


class RuleResponder:
    """Answers requests from an ordered list of authoring rules.

    A rule is ``{"role": ..., "when": {...}, "payload": {...}}``; it matches when
    every ``when`` key equals the same key of ``request.inputs``. The first
    matching rule wins; unmatched requests fall through to ``fallback``.
    """

    def __init__(self, rules: list[Mapping[str, Any]], fallback: Responder | None = None) -> None:
        self.rules = [dict(r) for r in rules]
        self.fallback = fallback
        self.hits: dict[int, int] = {}

    def __call__(self, request: LlmRequest) -> Mapping[str, Any]:
        for i, rule in enumerate(self.rules):
            if rule["role"] != request.role.value:
                continue
            when = rule.get("when", {})
            if all(request.inputs.get(k) == v for k, v in when.items()):
                self.hits[i] = self.hits.get(i, 0) + 1
                return rule["payload"]
        if self.fallback is None:
            raise errors.ScriptedMiss(f"no rule for {request.role.value} with inputs {sorted(request.inputs)}")
        return self.fallback(request)

    def unused_rules(self) -> list[int]:
        return [i for i in range(len(self.rules)) if i not in self.hits]


_SYSTEM = (
    "You are a component of an agent-memory pipeline. Reply with a single JSON "
    "object that conforms to the schema given in the instructions. No prose."
)


class LiveProvider:
    """Generic chat-completions endpoint (``POST {base_url}/chat/completions``)."""

    repairable = True

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 60.0,
        role_models: Mapping[str, str] | None = None,
        client: httpx.Client | None = None,
    ) -> None:
        self.model = model
        self.role_models = dict(role_models or {})
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(base_url=base_url, headers=headers, timeout=timeout)

    def generate(self, request: LlmRequest) -> str:
        body = {
            "model": self.role_models.get(request.role.value, self.model),
            "temperature": request.temperature,
            "response_format": {"type": "json_object"},
            "messages": [
                {"role": "system", "content": _SYSTEM},
                {"role": "user", "content": request.prompt},
            ],
        }
        try:
            resp = self._client.post("/chat/completions", json=body)
        except httpx.TimeoutException as exc:
            raise errors.GatewayTimeout(str(exc)) from exc
        except httpx.HTTPError as exc:
            raise errors.ProviderUnavailable(str(exc)) from exc
        if resp.status_code >= 500 or resp.status_code in (401, 403, 404, 429):
            raise errors.ProviderUnavailable(f"provider answered HTTP {resp.status_code}")
        try:
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError, TypeError) as exc:
            raise errors.ProviderUnavailable(f"unexpected provider response: {exc}") from exc
