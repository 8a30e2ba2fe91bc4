"""Uniform access to a chat-completion model and a text embedder."""

from tmem.gateway.embedder import Embedder, HashingEmbedder, HttpEmbedder
from tmem.gateway.gateway import Gateway, TokenBucket
from tmem.gateway.providers import (
    LiveProvider,
    LlmRequest,
    LlmResponse,
    RecordingProvider,
    RuleResponder,
    ScriptedProvider,
    dump_fixture,
    load_fixture,
    prompt_hash,
)
from tmem.gateway.schemas import SCHEMAS, Role, schema_id

__all__ = [
    "SCHEMAS",
    "Embedder",
    "Gateway",
    "HashingEmbedder",
    "HttpEmbedder",
    "LiveProvider",
    "LlmRequest",
    "LlmResponse",
    "RecordingProvider",
    "Role",
    "RuleResponder",
    "ScriptedProvider",
    "TokenBucket",
    "dump_fixture",
    "load_fixture",
    "prompt_hash",
    "schema_id",
]
