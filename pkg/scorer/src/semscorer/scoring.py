"""Similarity scoring and symmetric outlier removal."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .embedding import cosine

MIN_TOKENS = 5
MAX_REPETITION = 0.5


@dataclass(frozen=True)
class ScoreResult:
    id: int
    score: float
    degenerate: bool


def is_degenerate(text: str) -> bool:
    """Trivial output: empty, under five tokens, or one token dominating."""
    tokens = text.lower().split()
    if not tokens or len(tokens) < MIN_TOKENS:
        return True
    top = Counter(tokens).most_common(1)[0][1]
    return top / len(tokens) > MAX_REPETITION


def score_similarity(embedder, candidate: str, reference: str) -> tuple[float, bool]:
    """Cosine similarity of sentence embeddings mapped from [-1, 1] to [0, 1].

    Empty text cannot be embedded meaningfully: the pair scores 0.0 and is
    flagged degenerate so outlier removal can drop it downstream.
    """
    if not candidate.strip() or not reference.strip():
        return 0.0, True
    sim = cosine(embedder.embed(candidate), embedder.embed(reference))
    score = (sim + 1.0) / 2.0
    return min(1.0, max(0.0, score)), is_degenerate(candidate)


def symmetric_outlier_removal(
    scores_a: Sequence[ScoreResult], scores_b: Sequence[ScoreResult]
) -> tuple[list[ScoreResult], list[ScoreResult], list[int]]:
    """Drop every index flagged degenerate in either list from both lists.

    Keeps two models' score lists aligned so their means are computed over
    the same surviving inputs.

    Raises:
        ValueError: the lists differ in length.
    """
    if len(scores_a) != len(scores_b):
        raise ValueError(
            f"score lists must align: {len(scores_a)} vs {len(scores_b)}"
        )
    removed = [
        i
        for i, (a, b) in enumerate(zip(scores_a, scores_b))
        if a.degenerate or b.degenerate
    ]
    dropped = set(removed)
    kept_a = [a for i, a in enumerate(scores_a) if i not in dropped]
    kept_b = [b for i, b in enumerate(scores_b) if i not in dropped]
    return kept_a, kept_b, removed
