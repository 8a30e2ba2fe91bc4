from __future__ import annotations

import json
import threading
import time
from collections.abc import Callable, Mapping
from typing import Any

from tmem import errors
from tmem.gateway.embedder import Embedder
from tmem.gateway.providers import LlmRequest, LlmResponse, Provider
from tmem.gateway.schemas import Role, schema_errors, schema_id
from tmem.models import Embedding
from tmem.prompts import render

# Extra semantic check on a schema-valid payload; raise ValueError to reject.
PayloadCheck = Callable[[dict[str, Any]], None]

REPAIR_SUFFIX = (
    "\n\nYour previous answer was rejected:\n{problems}\n"
    "Reply again with a single JSON object that fixes these problems."
)


class TokenBucket:
    """Thread-safe admission limiter; ``acquire`` blocks until a token is free."""

    def __init__(self, rate: float, burst: int = 1) -> None:
        if rate <= 0:
            raise errors.ConfigError("rate limit must be positive")
        self.rate = rate
        self.capacity = float(max(burst, 1))
        self._tokens = self.capacity
        self._stamp = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            now = time.monotonic()
            self._tokens = min(self.capacity, self._tokens + (now - self._stamp) * self.rate)
            self._stamp = now
            self._tokens -= 1.0
            wait = -self._tokens / self.rate if self._tokens < 0 else 0.0
        if wait > 0:
            time.sleep(wait)


class Gateway:
    """Single entry point for structured completions and embeddings."""

    def __init__(
        self,
        provider: Provider,
        embedder: Embedder,
        *,
        max_retries: int = 2,
        rate_limit: float | None = None,
        burst: int = 1,
    ) -> None:
        self.provider = provider
        self.embedder = embedder
        self.max_retries = max_retries
        self._bucket = TokenBucket(rate_limit, burst) if rate_limit else None

    @property
    def dim(self) -> int:
        return self.embedder.dim

    def complete(self, request: LlmRequest, check: PayloadCheck | None = None) -> LlmResponse:
        current = request
        attempts = 1 + (self.max_retries if self.provider.repairable else 0)
        problems: list[str] = []
        for _ in range(attempts):
            if self._bucket is not None:
                self._bucket.acquire()
            raw = self.provider.generate(current)
            problems = _problems(raw, request.response_schema_id, check)
            if not problems:
                return LlmResponse(payload=json.loads(raw), raw=raw)
            current = request.model_copy(
                update={"prompt": request.prompt + REPAIR_SUFFIX.format(problems="\n".join(problems))}
            )
        raise errors.SchemaViolation(
            f"{request.role.value}: invalid payload after {attempts} attempt(s): {'; '.join(problems)}"
        )

    def ask(
        self,
        role: Role,
        inputs: Mapping[str, Any],
        check: PayloadCheck | None = None,
    ) -> dict[str, Any]:
        """Render the role's prompt template from ``inputs`` and return the payload."""
        request = LlmRequest(
            role=role,
            prompt=render(role.value, inputs),
            response_schema_id=schema_id(role),
            inputs=dict(inputs),
        )
        return self.complete(request, check).payload

    def embed(self, text: str) -> Embedding:
        if not text or not text.strip():
            raise errors.EmptyText("cannot embed empty text")
        return self.embedder.embed(text)


def _problems(raw: str, schema: str, check: PayloadCheck | None) -> list[str]:
    try:
        payload = json.loads(raw)
    except (json.JSONDecodeError, TypeError) as exc:
        return [f"not valid JSON: {exc}"]
    if not isinstance(payload, dict):
        return ["top-level value must be a JSON object"]
    found = schema_errors(schema, payload)
    if found or check is None:
        return found
    try:
        check(payload)
    except ValueError as exc:
        return [str(exc)]
    return []
