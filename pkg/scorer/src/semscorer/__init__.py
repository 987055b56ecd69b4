"""Semantic-similarity scoring worker.

Scores candidate texts against references with sentence-embedding cosine
similarity mapped onto [0, 1], flags trivial or degenerate outputs, and
supports symmetric outlier removal across two models' score lists. Serves
one JSON object per line over stdin/stdout so any process can drive it.
"""

__version__ = "0.1.0"

from .embedding import HashedNgramEmbedder, load_embedder
from .scoring import (
    ScoreResult,
    is_degenerate,
    score_similarity,
    symmetric_outlier_removal,
)

__all__ = [
    "HashedNgramEmbedder",
    "load_embedder",
    "ScoreResult",
    "is_degenerate",
    "score_similarity",
    "symmetric_outlier_removal",
]
