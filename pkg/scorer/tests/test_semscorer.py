"""Scorer acceptance: similarity properties, removal rule, protocol."""

import itertools
import json
import subprocess
import sys
from collections import Counter

import pytest

from semscorer import (
    HashedNgramEmbedder,
    ScoreResult,
    is_degenerate,
    score_similarity,
    symmetric_outlier_removal,
)

from fixtures import DEGENERATE_CANDIDATES, PARAPHRASES, REFERENCES, UNRELATED, corpus

EMBEDDER = HashedNgramEmbedder()


def lexical_overlap(candidate: str, reference: str) -> float:
    """Token-overlap F1: the comparison baseline for ranking agreement."""
    a, b = Counter(candidate.lower().split()), Counter(reference.lower().split())
    if not a or not b:
        return 0.0
    overlap = sum((a & b).values())
    if overlap == 0:
        return 0.0
    p, r = overlap / sum(a.values()), overlap / sum(b.values())
    return 2 * p * r / (p + r)


class TestScoreSimilarity:
    def test_self_similarity_is_one(self):
        for text in REFERENCES:
            score, degenerate = score_similarity(EMBEDDER, text, text)
            assert score == pytest.approx(1.0, abs=1e-6)
            assert not degenerate

    def test_symmetry(self):
        for cand, ref, _ in corpus()[:12]:
            s1, _ = score_similarity(EMBEDDER, cand, ref)
            s2, _ = score_similarity(EMBEDDER, ref, cand)
            assert s1 == pytest.approx(s2, abs=1e-6)

    def test_scores_in_unit_interval(self):
        for cand, ref, _ in corpus():
            score, _ = score_similarity(EMBEDDER, cand, ref)
            assert 0.0 <= score <= 1.0

    def test_paraphrase_outranks_unrelated_per_reference(self):
        for ref, para, unrel in zip(REFERENCES, PARAPHRASES, UNRELATED):
            s_para, _ = score_similarity(EMBEDDER, para, ref)
            s_unrel, _ = score_similarity(EMBEDDER, unrel, ref)
            assert s_para > s_unrel

    def test_empty_candidate_is_degenerate_zero(self):
        score, degenerate = score_similarity(EMBEDDER, "", REFERENCES[0])
        assert score == 0.0
        assert degenerate

    def test_ranking_agrees_with_lexical_fallback(self):
        # same orderings (not values) as the lexical baseline on >= 90% of
        # case pairs with a meaningful gap on both sides
        scored = []
        for cand, ref, kind in corpus():
            if kind == "degenerate":
                continue
            emb, _ = score_similarity(EMBEDDER, cand, ref)
            scored.append((emb, lexical_overlap(cand, ref)))
        agree = total = 0
        for (e1, l1), (e2, l2) in itertools.combinations(scored, 2):
            if abs(e1 - e2) < 1e-6 or abs(l1 - l2) < 1e-6:
                continue
            total += 1
            if (e1 > e2) == (l1 > l2):
                agree += 1
        assert total > 0
        assert agree / total >= 0.90


class TestDegeneracy:
    @pytest.mark.parametrize("text", DEGENERATE_CANDIDATES)
    def test_fixture_degenerates_flagged(self, text):
        assert is_degenerate(text)

    def test_normal_text_not_flagged(self):
        for text in REFERENCES:
            assert not is_degenerate(text)


def scores(flags):
    return [ScoreResult(id=i, score=0.5, degenerate=f) for i, f in enumerate(flags)]


class TestSymmetricRemoval:
    def test_no_flags(self):
        a, b = scores([False] * 6), scores([False] * 6)
        ka, kb, removed = symmetric_outlier_removal(a, b)
        assert (ka, kb, removed) == (a, b, [])

    def test_one_sided_flag_removes_from_both(self):
        a = scores([False, False, False, True, False])
        b = scores([False] * 5)
        ka, kb, removed = symmetric_outlier_removal(a, b)
        assert removed == [3]
        assert len(ka) == len(kb) == 4

    def test_union_rule(self):
        a = scores([False, True, False, False, False])
        b = scores([False, False, False, False, True])
        ka, kb, removed = symmetric_outlier_removal(a, b)
        assert removed == [1, 4]
        assert [r.id for r in ka] == [0, 2, 3]
        assert [r.id for r in kb] == [0, 2, 3]

    def test_twenty_case_fixture(self):
        # model A scores the fixture corpus; model B flags two extra cases
        cases = corpus()
        a = []
        for i, (cand, ref, _) in enumerate(cases):
            score, degenerate = score_similarity(EMBEDDER, cand, ref)
            a.append(ScoreResult(i, score, degenerate))
        b = list(a)
        b[0] = ScoreResult(0, 0.9, True)
        b[5] = ScoreResult(5, 0.9, True)
        ka, kb, removed = symmetric_outlier_removal(a, b)
        expected = sorted(
            {i for i, (_, _, kind) in enumerate(cases) if kind == "degenerate"}
            | {0, 5}
        )
        assert removed == expected
        assert len(ka) == len(kb) == 20 - len(expected)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            symmetric_outlier_removal(scores([False]), scores([False, False]))


class TestProtocol:
    def run_worker(self, lines, extra_args=()):
        proc = subprocess.run(
            [sys.executable, "-m", "semscorer", *extra_args],
            input="".join(json.dumps(x) + "\n" for x in lines),
            capture_output=True,
            text=True,
            timeout=60,
        )
        return proc

    def test_round_trip(self):
        reqs = [
            {"id": i, "candidate": cand, "reference": ref}
            for i, (cand, ref, _) in enumerate(corpus())
        ]
        proc = self.run_worker(reqs)
        assert proc.returncode == 0
        replies = [json.loads(line) for line in proc.stdout.splitlines() if line]
        assert [r["id"] for r in replies] == list(range(20))
        for req, rep in zip(reqs, replies):
            assert set(rep) == {"id", "score", "degenerate"}
            expected, flag = score_similarity(EMBEDDER, req["candidate"], req["reference"])
            assert rep["score"] == pytest.approx(expected, abs=1e-5)
            assert rep["degenerate"] == flag

    def test_malformed_input_exits_nonzero(self):
        proc = subprocess.run(
            [sys.executable, "-m", "semscorer"],
            input="this is not json\n",
            capture_output=True,
            text=True,
            timeout=60,
        )
        assert proc.returncode == 2
        assert "bad request" in proc.stderr

    def test_info_reports_variant(self):
        proc = self.run_worker([], extra_args=("--info",))
        assert proc.returncode == 0
        info = json.loads(proc.stdout)
        assert info["variant"].startswith("hashed-char-ngram")

    def test_unavailable_model_exits_nonzero(self):
        proc = self.run_worker(
            [{"id": 0, "candidate": "a b c d e f", "reference": "a b c d e f"}],
            extra_args=("--model", "/definitely/not/a/model"),
        )
        assert proc.returncode == 3
