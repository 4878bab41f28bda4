"""Text embedding providers for concept retrieval.

Two implementations: a fully offline hashed character-trigram embedder used
in tests and default runs, and a thin HTTP client for a remote embedding
service. Both return unit-length vectors and are deterministic per input.
"""

from __future__ import annotations

import hashlib
import math
import os
from typing import Protocol

from .errors import RetrievalError


class EmbeddingProvider(Protocol):
    dimension: int

    def embed(self, text: str) -> list[float]:
        """Unit-length vector of `dimension` floats; same text, same vector."""
        ...


class HashedTrigramEmbedder:
    """Character-trigram term frequencies hashed into a fixed-width vector.

    Offline and deterministic: bucket and sign come from blake2b of each
    trigram. Components are rounded to 9 decimal places so vectors survive
    JSON persistence byte-exactly; the norm stays within 1e-6 of 1.
    """

    def __init__(self, dimension: int = 256):
        if dimension < 2:
            raise ValueError("dimension must be >= 2")
        self.dimension = dimension

    def embed(self, text: str) -> list[float]:
        padded = f" {text.strip().lower()} "
        counts = [0.0] * self.dimension
        for i in range(len(padded) - 2):
            trigram = padded[i : i + 3]
            digest = hashlib.blake2b(trigram.encode("utf-8"), digest_size=8).digest()
            h = int.from_bytes(digest, "big")
            bucket = h % self.dimension
            sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
            counts[bucket] += sign
        norm = math.sqrt(sum(v * v for v in counts))
        if norm == 0.0:
            counts[0] = 1.0
            norm = 1.0
        return [round(v / norm, 9) for v in counts]


class RemoteEmbedder:
    """Client for an embeddings HTTP endpoint (OpenAI-style request shape)."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        dimension: int,
        api_key_env: str = "FIGFORGE_API_KEY",
        timeout: float = 30.0,
    ):
        self.endpoint = endpoint
        self.model = model
        self.dimension = dimension
        self.api_key_env = api_key_env
        self.timeout = timeout

    def embed(self, text: str) -> list[float]:
        import requests

        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            response = requests.post(
                self.endpoint,
                json={"model": self.model, "input": [text]},
                headers=headers,
                timeout=self.timeout,
            )
            response.raise_for_status()
            payload = response.json()
            vector = [float(v) for v in payload["data"][0]["embedding"]]
        except Exception as exc:
            raise RetrievalError(f"embedding request failed: {exc}") from exc
        if len(vector) != self.dimension:
            raise RetrievalError(
                f"embedding dimension {len(vector)} != configured {self.dimension}"
            )
        norm = math.sqrt(sum(v * v for v in vector))
        if norm == 0.0:
            raise RetrievalError("embedding service returned a zero vector")
        return [round(v / norm, 9) for v in vector]
