"""Sentence embedders.

The default is a deterministic hashed character-n-gram embedder: no model
files, no network, identical vectors for identical text on any machine.
A transformer-based embedder can be selected instead when a sentence
embedding model name/path is supplied; scores are only comparable within
one variant, so the variant name travels with every batch.
"""

from __future__ import annotations

import hashlib

import numpy as np


class HashedNgramEmbedder:
    """Signed feature hashing over character 3-grams and word unigrams."""

    def __init__(self, dim: int = 2048):
        self.dim = dim

    @property
    def variant(self) -> str:
        return f"hashed-char-ngram-d{self.dim}"

    def _features(self, text: str):
        words = text.lower().split()
        for w in words:
            yield "w:" + w
            padded = f" {w} "
            for i in range(len(padded) - 2):
                yield "g:" + padded[i : i + 3]

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for feat in self._features(text):
            digest = hashlib.blake2b(feat.encode("utf-8"), digest_size=8).digest()
            h = int.from_bytes(digest, "little")
            idx = (h >> 1) % self.dim
            sign = 1.0 if h & 1 else -1.0
            vec[idx] += sign
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec


class TransformerEmbedder:
    """sentence-transformers wrapper, loaded lazily on first use."""

    def __init__(self, model_name: str):
        from sentence_transformers import SentenceTransformer

        self.model_name = model_name
        self._model = SentenceTransformer(model_name)

    @property
    def variant(self) -> str:
        return f"sentence-transformers:{self.model_name}"

    def embed(self, text: str) -> np.ndarray:
        vec = np.asarray(self._model.encode([text])[0], dtype=np.float64)
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec


def load_embedder(model_name: str | None = None):
    """The hashed embedder by default; a transformer when a model is named."""
    if model_name:
        return TransformerEmbedder(model_name)
    return HashedNgramEmbedder()


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    # vectors arrive L2-normalized; guard the all-zero case
    if not a.any() or not b.any():
        return 0.0
    return float(np.clip(np.dot(a, b), -1.0, 1.0))
