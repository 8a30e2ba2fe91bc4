"""Text embedders.

:class:`HashingEmbedder` is the deterministic, dependency-free embedder used by
tests and offline runs: lowercased word unigrams and bigrams are hashed with
64-bit FNV-1a into ``dim`` buckets, bit 63 of the hash picks the sign, counts
accumulate and the vector is L2-normalized.
"""

from __future__ import annotations

import re
from typing import Protocol

import httpx

from tmem import errors
from tmem.models import Embedding

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1
_WORD = re.compile(r"\w+")


class Embedder(Protocol):
    dim: int

    def embed(self, text: str) -> Embedding: ...


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def tokenize(text: str) -> list[str]:
    return _WORD.findall(text.lower())


def features(text: str) -> list[str]:
    """Unigrams followed by space-joined bigrams, in text order."""
    words = tokenize(text)
    return words + [f"{a} {b}" for a, b in zip(words, words[1:])]


class HashingEmbedder:
    def __init__(self, dim: int = 256) -> None:
        if dim <= 0:
            raise errors.ConfigError("embedding dimension must be positive")
        self.dim = dim

    def counts(self, text: str) -> list[float]:
        vec = [0.0] * self.dim
        for feat in features(text):
            h = fnv1a_64(feat.encode("utf-8"))
            vec[h % self.dim] += -1.0 if h >> 63 else 1.0
        return vec

    def embed(self, text: str) -> Embedding:
        feats = features(text)
        if not feats:
            raise errors.EmptyText(f"no word features in {text!r}")
        vec = self.counts(text)
        if not any(vec):
            # every feature cancelled out; fall back to one whole-text feature
            h = fnv1a_64(("\x00" + " ".join(tokenize(text))).encode("utf-8"))
            vec[h % self.dim] = -1.0 if h >> 63 else 1.0
        return Embedding.normalized(vec)


class HttpEmbedder:
    """OpenAI-style ``/embeddings`` endpoint; output is re-normalized."""

    def __init__(
        self,
        base_url: str,
        model: str,
        dim: int,
        api_key: str | None = None,
        timeout: float = 30.0,
        client: httpx.Client | None = None,
    ) -> None:
        self.dim = dim
        self.model = model
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(base_url=base_url, headers=headers, timeout=timeout)

    def embed(self, text: str) -> Embedding:
        try:
            resp = self._client.post("/embeddings", json={"model": self.model, "input": text})
            resp.raise_for_status()
            vector = resp.json()["data"][0]["embedding"]
        except httpx.TimeoutException as exc:
            raise errors.GatewayTimeout(str(exc)) from exc
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise errors.ProviderUnavailable(f"embedding request failed: {exc}") from exc
        if len(vector) != self.dim:
            raise errors.DimensionMismatch(f"embedder returned {len(vector)} dims, expected {self.dim}")
        try:
            return Embedding.normalized(vector)
        except ValueError as exc:
            raise errors.ProviderUnavailable(str(exc)) from exc
