"""Accuracy scoring against reference answers.

The heavy lifting (sentence-embedding similarity) lives in an external
scorer process speaking line-delimited JSON: one ``{id, candidate,
reference}`` per stdin line, one ``{id, score, degenerate}`` per stdout
line. When no scorer is configured or the process fails, a built-in
lexical-overlap fallback takes over and the result is marked accordingly,
so every measurement path works without the scorer installed.
"""

from __future__ import annotations

import json
import subprocess
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .errors import InputError, MismatchError

DEGENERATE_MIN_TOKENS = 5
DEGENERATE_REPETITION = 0.5

LEXICAL_VARIANT = "lexical-overlap-fallback"


def is_degenerate(text: str) -> bool:
    """Trivial output check: empty, too short, or dominated by one token."""
    tokens = text.lower().split()
    if not tokens:
        return True
    if len(tokens) < DEGENERATE_MIN_TOKENS:
        return True
    top = Counter(tokens).most_common(1)[0][1]
    return top / len(tokens) > DEGENERATE_REPETITION


def lexical_similarity(candidate: str, reference: str) -> float:
    """Token-overlap F1 in [0, 1]; both empty scores 0."""
    a = Counter(candidate.lower().split())
    b = Counter(reference.lower().split())
    if not a or not b:
        return 0.0
    overlap = sum((a & b).values())
    if overlap == 0:
        return 0.0
    precision = overlap / sum(a.values())
    recall = overlap / sum(b.values())
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class ScoredPair:
    id: int
    score: float
    degenerate: bool


def score_pairs_lexical(pairs: Sequence[tuple[str, str]]) -> list[ScoredPair]:
    out = []
    for i, (cand, ref) in enumerate(pairs):
        if not cand.strip() or not ref.strip():
            out.append(ScoredPair(id=i, score=0.0, degenerate=True))
        else:
            out.append(
                ScoredPair(
                    id=i,
                    score=lexical_similarity(cand, ref),
                    degenerate=is_degenerate(cand),
                )
            )
    return out


class ScorerUnavailable(Exception):
    """Raised internally when the external scorer cannot serve the batch."""


def score_pairs_external(
    pairs: Sequence[tuple[str, str]], scorer_cmd: Sequence[str], timeout_s: float = 300.0
) -> list[ScoredPair]:
    """Send one batch through the external scorer process."""
    request = "".join(
        json.dumps({"id": i, "candidate": c, "reference": r}) + "\n"
        for i, (c, r) in enumerate(pairs)
    )
    try:
        proc = subprocess.run(
            list(scorer_cmd),
            input=request,
            capture_output=True,
            text=True,
            timeout=timeout_s,
        )
    except (OSError, subprocess.TimeoutExpired) as exc:
        raise ScorerUnavailable(str(exc)) from exc
    if proc.returncode != 0:
        raise ScorerUnavailable(
            f"scorer exited with {proc.returncode}: {proc.stderr.strip()[:200]}"
        )
    by_id: dict[int, ScoredPair] = {}
    for line in proc.stdout.splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            by_id[int(obj["id"])] = ScoredPair(
                id=int(obj["id"]),
                score=float(obj["score"]),
                degenerate=bool(obj.get("degenerate", False)),
            )
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ScorerUnavailable(f"malformed scorer output: {line[:80]}") from exc
    if len(by_id) != len(pairs):
        raise ScorerUnavailable(
            f"scorer answered {len(by_id)} of {len(pairs)} requests"
        )
    return [by_id[i] for i in range(len(pairs))]


def scorer_info(scorer_cmd: Sequence[str], timeout_s: float = 60.0) -> dict:
    """Ask the scorer for its identity (embedding variant) via ``--info``."""
    try:
        proc = subprocess.run(
            list(scorer_cmd) + ["--info"],
            capture_output=True,
            text=True,
            timeout=timeout_s,
        )
        if proc.returncode == 0:
            return json.loads(proc.stdout.strip() or "{}")
    except (OSError, subprocess.TimeoutExpired, json.JSONDecodeError):
        pass
    return {}


def score_pairs(
    pairs: Sequence[tuple[str, str]],
    scorer_cmd: Sequence[str] | None = None,
    timeout_s: float = 300.0,
) -> tuple[list[ScoredPair], str, bool]:
    """Score (candidate, reference) pairs, preferring the external scorer.

    Returns (scores, variant label, fallback flag). The fallback flag is
    True whenever the lexical path produced the scores, either because no
    scorer was configured or because the configured one failed.
    """
    if scorer_cmd:
        try:
            scored = score_pairs_external(pairs, scorer_cmd, timeout_s)
            info = scorer_info(scorer_cmd)
            return scored, str(info.get("variant", "external-scorer")), False
        except ScorerUnavailable:
            pass
    return score_pairs_lexical(pairs), LEXICAL_VARIANT, True


def symmetric_outlier_removal(
    a: Sequence[ScoredPair], b: Sequence[ScoredPair]
) -> tuple[list[ScoredPair], list[ScoredPair], list[int]]:
    """Drop indices flagged degenerate in either list from both lists."""
    if len(a) != len(b):
        raise MismatchError(f"score lists differ in length: {len(a)} vs {len(b)}")
    removed = [i for i, (x, y) in enumerate(zip(a, b)) if x.degenerate or y.degenerate]
    removed_set = set(removed)
    fa = [x for i, x in enumerate(a) if i not in removed_set]
    fb = [y for i, y in enumerate(b) if i not in removed_set]
    return fa, fb, removed


@dataclass(frozen=True)
class AccuracyCurve:
    """Per-input similarity scores with degenerate inputs removed from the mean."""

    scores: tuple[float, ...]
    removed_indices: tuple[int, ...]
    variant: str
    fallback: bool
    input_keys: tuple[str, ...] = ()

    def __post_init__(self):
        for s in self.scores:
            if not 0.0 <= s <= 1.0:
                raise InputError(f"scores must lie in [0, 1], got {s}")

    @property
    def mean(self) -> float:
        kept = [s for i, s in enumerate(self.scores) if i not in set(self.removed_indices)]
        return sum(kept) / len(kept) if kept else 0.0


def accuracy_curve(
    scored: Sequence[ScoredPair],
    variant: str,
    fallback: bool,
    removed: Sequence[int] | None = None,
    input_keys: Sequence[str] = (),
) -> AccuracyCurve:
    if removed is None:
        removed = [p.id for p in scored if p.degenerate]
    return AccuracyCurve(
        scores=tuple(p.score for p in scored),
        removed_indices=tuple(removed),
        variant=variant,
        fallback=fallback,
        input_keys=tuple(input_keys),
    )
