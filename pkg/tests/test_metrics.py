from __future__ import annotations

import random
import statistics

import pytest
from hypothesis import given
from hypothesis import strategies as st
from nltk.translate.bleu_score import SmoothingFunction, corpus_bleu

from memkeeper.errors import EmptyInput, LengthMismatch, SchemaViolation
from memkeeper.memory import MemOp, MemoryState
from memkeeper.metrics import (
    RaterScores,
    bleu_n,
    confusion_matrix,
    distinct_n,
    distinct_n_conventional,
    generation_report,
    pairwise_accuracy,
    render_table,
    set_f1,
    standardize_scores,
    unigram_f1,
)


def nltk_bleu(cands, refs, n):
    weights = (1.0,) if n == 1 else (0.5, 0.5)
    return corpus_bleu([[r.split()] for r in refs], [c.split() for c in cands], weights=weights,
                       smoothing_function=SmoothingFunction().method1)


class TestAccuracy:
    def test_basic(self):
        assert pairwise_accuracy([MemOp.PASS, MemOp.APPEND], [MemOp.PASS, MemOp.DELETE]) == 0.5

    def test_length(self):
        with pytest.raises(LengthMismatch):
            pairwise_accuracy([MemOp.PASS], [])

    def test_empty(self):
        with pytest.raises(EmptyInput):
            pairwise_accuracy([], [])

    def test_confusion_counts(self):
        rng = random.Random(0)
        gold = [rng.choice(list(MemOp)) for _ in range(200)]
        pred = [rng.choice(list(MemOp)) for _ in range(200)]
        m = confusion_matrix(pred, gold)
        for g in MemOp:
            for p in MemOp:
                assert m[g.value][p.value] == sum(1 for a, b in zip(pred, gold) if a is p and b is g)
        diag = sum(m[o.value][o.value] for o in MemOp)
        assert diag / 200 == pairwise_accuracy(pred, gold)


class TestSetF1:
    def test_identical(self):
        assert set_f1(["a", "b"], ["b", "a"]).f1 == 1.0

    def test_disjoint(self):
        assert set_f1(["a"], ["b"]).f1 == 0.0

    def test_two_thirds(self):
        r = set_f1(["a", "b", "c"], ["a", "b", "d"])
        assert r.precision == r.recall == r.f1 == 2 / 3

    def test_both_empty(self):
        assert set_f1([], []).f1 == 1.0

    def test_one_empty(self):
        assert set_f1([], ["a"]).f1 == 0.0
        assert set_f1(["a"], []).f1 == 0.0

    def test_memory_states(self):
        assert set_f1(MemoryState.from_texts(["x"]), MemoryState.from_texts(["x "])).f1 == 1.0


class TestBleu:
    def test_hand_counted(self):
        assert abs(bleu_n(["a b c d"], ["a b x d"], 1) - 0.75) <= 1e-9
        assert abs(bleu_n(["a b c d"], ["a b x d"], 2) - 0.5) <= 1e-9

    def test_matches_nltk_on_example(self):
        assert bleu_n(["a b c d"], ["a b x d"], 2) == pytest.approx(nltk_bleu(["a b c d"], ["a b x d"], 2))

    def test_identical(self):
        assert bleu_n(["the cat sat"], ["the cat sat"], 2) == pytest.approx(1.0)

    def test_no_overlap_unsmoothed(self):
        assert bleu_n(["x y"], ["a b"], 1, smooth=False) == 0.0

    def test_brevity_penalty(self):
        import math
        assert bleu_n(["a b"], ["a b c d"], 1) == pytest.approx(math.exp(1 - 4 / 2))

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            bleu_n(["a"], [], 1)

    def test_bad_order(self):
        with pytest.raises(ValueError):
            bleu_n(["a"], ["a"], 3)

    @pytest.mark.filterwarnings("ignore::UserWarning")
    def test_random_corpora_match_nltk(self):
        rng = random.Random(11)
        vocab = "a b c d e f g".split()
        for _ in range(200):
            n_pairs = rng.randint(1, 4)
            cands = [" ".join(rng.choice(vocab) for _ in range(rng.randint(2, 8))) for _ in range(n_pairs)]
            refs = [" ".join(rng.choice(vocab) for _ in range(rng.randint(2, 8))) for _ in range(n_pairs)]
            for n in (1, 2):
                ours = bleu_n(cands, refs, n, smooth=False)
                theirs = corpus_bleu([[r.split()] for r in refs], [c.split() for c in cands],
                                     weights=(1.0,) if n == 1 else (0.5, 0.5))
                assert ours == pytest.approx(theirs, abs=1e-12)


class TestUnigramF1:
    def test_identical(self):
        assert unigram_f1("a b c", "a b c") == 1.0

    def test_disjoint(self):
        assert unigram_f1("a b", "c d") == 0.0

    def test_half(self):
        assert unigram_f1("a b", "a c") == 0.5

    def test_multiset(self):
        # "a a" vs "a": one shared token, P = 1/2, R = 1
        assert unigram_f1("a a", "a") == pytest.approx(2 / 3)


class TestDistinct:
    def test_words_denominator(self):
        assert distinct_n(["a b a"], 1) == 2 / 3
        assert distinct_n(["a b a"], 2) == 2 / 3

    def test_all_unique(self):
        assert distinct_n(["a b", "c d"], 1) == 1.0

    def test_conventional(self):
        assert distinct_n_conventional(["a b a"], 2) == 1.0

    def test_bigrams_do_not_cross_utterances(self):
        assert distinct_n(["a b", "c d"], 2) == 2 / 4

    def test_empty(self):
        with pytest.raises(EmptyInput):
            distinct_n([], 1)
        with pytest.raises(EmptyInput):
            distinct_n(["   "], 1)


class TestStandardize:
    def test_constant(self):
        assert standardize_scores([RaterScores("r", [50, 50, 50])]) == {"r": [0.0, 0.0, 0.0]}

    def test_two_point(self):
        assert standardize_scores([RaterScores("r", [0, 100])]) == {"r": [-1.0, 1.0]}

    @given(st.lists(st.floats(0, 100), min_size=2, max_size=30))
    def test_mean_zero_sd_one(self, xs):
        z = standardize_scores([RaterScores("r", xs)])["r"]
        if statistics.pstdev(xs) > 1e-6:
            assert abs(statistics.fmean(z)) <= 1e-9
            assert abs(statistics.pstdev(z) - 1.0) <= 1e-9

    def test_range(self):
        with pytest.raises(SchemaViolation):
            RaterScores("r", [101])

    def test_empty_rater(self):
        with pytest.raises(EmptyInput):
            RaterScores("r", [])


class TestReport:
    def test_generation_report(self):
        rep = generation_report(["a b c d"], ["a b x d"])
        assert rep["bleu1"] == pytest.approx(0.75)
        assert rep["n"] == 1
        assert rep["metadata"]["bleu_epsilon"] == 0.1

    def test_render_table(self):
        out = render_table([("x", 0.5)], ("k", "v"))
        assert out.splitlines()[0].startswith("k")
        assert "0.5000" in out
