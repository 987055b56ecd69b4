"""Lexical fallback scoring and the external-scorer protocol client."""

import json
import sys

import pytest

from cpulab.errors import InputError, MismatchError
from cpulab.scoring import (
    LEXICAL_VARIANT,
    AccuracyCurve,
    ScoredPair,
    accuracy_curve,
    is_degenerate,
    lexical_similarity,
    score_pairs,
    score_pairs_lexical,
    symmetric_outlier_removal,
)

REF = "the red car stopped at the first traffic light near the old bridge"
PARAPHRASE = "a red car halted at the first traffic light close to the old bridge"
UNRELATED = "quantum annealing schedules require careful tuning of transverse fields"


class TestLexical:
    def test_identical_is_one(self):
        assert lexical_similarity(REF, REF) == pytest.approx(1.0, abs=1e-6)

    def test_symmetry(self):
        assert lexical_similarity(REF, PARAPHRASE) == pytest.approx(
            lexical_similarity(PARAPHRASE, REF), abs=1e-6
        )

    def test_paraphrase_beats_unrelated(self):
        assert lexical_similarity(PARAPHRASE, REF) > lexical_similarity(UNRELATED, REF)

    def test_empty_scores_zero(self):
        assert lexical_similarity("", REF) == 0.0

    def test_range(self):
        for cand in (REF, PARAPHRASE, UNRELATED, "one word"):
            assert 0.0 <= lexical_similarity(cand, REF) <= 1.0


class TestDegenerate:
    def test_empty(self):
        assert is_degenerate("")

    def test_too_short(self):
        assert is_degenerate("only four small words")

    def test_repetition(self):
        assert is_degenerate("beep beep beep beep beep beep stop")

    def test_normal_text(self):
        assert not is_degenerate(REF)


class TestScorePairsLexical:
    def test_empty_candidate_flagged(self):
        scored = score_pairs_lexical([("", REF)])
        assert scored[0].score == 0.0
        assert scored[0].degenerate

    def test_ids_are_positional(self):
        scored = score_pairs_lexical([(REF, REF), (UNRELATED, REF)])
        assert [p.id for p in scored] == [0, 1]


class TestExternalScorer:
    def fake_scorer(self, tmp_path, body: str) -> list[str]:
        script = tmp_path / "fake_scorer.py"
        script.write_text(body)
        return [sys.executable, str(script)]

    def test_external_scores_used(self, tmp_path):
        cmd = self.fake_scorer(
            tmp_path,
            "import sys, json\n"
            "for line in sys.stdin:\n"
            "    req = json.loads(line)\n"
            "    print(json.dumps({'id': req['id'], 'score': 0.75, 'degenerate': False}))\n",
        )
        scored, variant, fallback = score_pairs([(REF, REF)], scorer_cmd=cmd)
        assert not fallback
        assert scored[0].score == 0.75

    def test_nonzero_exit_falls_back(self, tmp_path):
        cmd = self.fake_scorer(tmp_path, "import sys\nsys.exit(3)\n")
        scored, variant, fallback = score_pairs([(REF, REF)], scorer_cmd=cmd)
        assert fallback
        assert variant == LEXICAL_VARIANT
        assert scored[0].score == pytest.approx(1.0, abs=1e-6)

    def test_incomplete_answers_fall_back(self, tmp_path):
        cmd = self.fake_scorer(tmp_path, "pass\n")
        scored, variant, fallback = score_pairs([(REF, REF)], scorer_cmd=cmd)
        assert fallback

    def test_missing_binary_falls_back(self):
        scored, variant, fallback = score_pairs(
            [(REF, REF)], scorer_cmd=["/no/such/scorer"]
        )
        assert fallback

    def test_no_command_means_fallback(self):
        scored, variant, fallback = score_pairs([(PARAPHRASE, REF)])
        assert fallback
        assert variant == LEXICAL_VARIANT


class TestSymmetricRemoval:
    def pairs(self, flags):
        return [ScoredPair(id=i, score=0.5, degenerate=f) for i, f in enumerate(flags)]

    def test_no_flags_unchanged(self):
        a, b = self.pairs([False] * 4), self.pairs([False] * 4)
        fa, fb, removed = symmetric_outlier_removal(a, b)
        assert (fa, fb) == (a, b)
        assert removed == []

    def test_single_side_removal(self):
        a = self.pairs([False, False, False, True, False])
        b = self.pairs([False] * 5)
        fa, fb, removed = symmetric_outlier_removal(a, b)
        assert removed == [3]
        assert len(fa) == len(fb) == 4

    def test_union_rule(self):
        a = self.pairs([False, True, False, False, False])
        b = self.pairs([False, False, False, False, True])
        fa, fb, removed = symmetric_outlier_removal(a, b)
        assert removed == [1, 4]
        assert len(fa) == len(fb) == 3

    def test_length_mismatch(self):
        with pytest.raises(MismatchError):
            symmetric_outlier_removal(self.pairs([False]), self.pairs([False, False]))


class TestAccuracyCurve:
    def test_mean_excludes_removed(self):
        scored = [
            ScoredPair(0, 0.8, False),
            ScoredPair(1, 0.0, True),
            ScoredPair(2, 0.6, False),
        ]
        curve = accuracy_curve(scored, LEXICAL_VARIANT, fallback=True)
        assert curve.removed_indices == (1,)
        assert curve.mean == pytest.approx(0.7)
        assert curve.fallback

    def test_score_bounds_enforced(self):
        with pytest.raises(InputError):
            AccuracyCurve(scores=(1.5,), removed_indices=(), variant="x", fallback=True)
