import math
import random

import numpy as np
import pytest

from catmt.evaluation import (
    BLEU_DIM,
    approx_randomization,
    bleu,
    bleu_from_stats,
    bleu_result,
    bleu_stats,
    corpus_bleu_stats,
    levenshtein,
    score_report,
    sentence_bleu_plus1,
    stars,
    ter,
    ter_edits,
    wer,
)


def random_pair(rng, vocab="abcdef"):
    h = [rng.choice(vocab) for _ in range(rng.randint(0, 9))]
    r = [rng.choice(vocab) for _ in range(rng.randint(1, 9))]
    return h, r


class TestBleu:
    def test_identity(self):
        hyps = ["the cat sat on the mat", "a b c d e"]
        assert bleu(hyps, [[h] for h in hyps]).score == pytest.approx(100.0)

    def test_hand_stats_short(self):
        s = bleu_stats("the cat sat", ["the cat sat down"])
        assert s.tolist() == [3, 2, 1, 0, 3, 2, 1, 0, 3, 4]
        # no 4-grams in the hypothesis: unsmoothed corpus BLEU is 0
        assert bleu(["the cat sat"], [["the cat sat down"]]).score == 0.0
        assert bleu_result(s).bp == pytest.approx(math.exp(1 - 4 / 3))

    def test_hand_corpus_value(self):
        hyps = ["the cat sat", "a b c d e"]
        refs = [["the cat sat down"], ["a b c d x"]]
        # matches/totals: 1g 7/8, 2g 5/6, 3g 3/4, 4g 1/2; c = 8, r = 9
        p = [7 / 8, 5 / 6, 3 / 4, 1 / 2]
        want = 100 * math.exp(sum(math.log(x) for x in p) / 4) * math.exp(1 - 9 / 8)
        res = bleu(hyps, refs)
        assert res.score == pytest.approx(want, abs=1e-6)
        assert res.precisions == pytest.approx(p)
        assert (res.hyp_len, res.ref_len) == (8, 9)

    def test_clipping_and_multi_ref(self):
        s = bleu_stats("the the the", ["the cat", "the the x"])
        assert s[0] == 2  # clipped by the max count over references
        # closest reference length, shorter on ties
        assert bleu_stats("a b c", ["a b", "a b c d"])[-1] == 2
        assert bleu_stats("a b c", ["a b c d e", "a"])[-1] == 1
        assert bleu_stats("a b c", ["a b c d", "a"])[-1] == 4

    def test_zero_four_gram_matches(self):
        assert bleu(["a b c d"], [["a b c x"]]).score == 0.0

    def test_case_insensitive(self):
        assert bleu(["The Cat"], [["the cat"]]).precisions == bleu(["the cat"], [["the cat"]]).precisions
        assert bleu_stats("The", ["the"], case_insensitive=False)[0] == 0

    def test_additive(self):
        rng = random.Random(0)
        pairs = [random_pair(rng) for _ in range(30)]
        hyps, refs = [h for h, _ in pairs], [[r] for _, r in pairs]
        whole = corpus_bleu_stats(hyps, refs).sum(0)
        parts = corpus_bleu_stats(hyps[:10], refs[:10]).sum(0) + corpus_bleu_stats(hyps[10:], refs[10:]).sum(0)
        assert bleu_from_stats(whole) == bleu_from_stats(parts)

    def test_vectorized(self):
        rows = np.array([bleu_stats("a b c d e", ["a b c d e"]), bleu_stats("a b", ["x y"])])
        np.testing.assert_allclose(bleu_from_stats(rows), [100.0, 0.0])

    def test_errors(self):
        with pytest.raises(ValueError):
            bleu([], [])
        with pytest.raises(ValueError):
            bleu(["a"], [["a"], ["b"]])
        with pytest.raises(ValueError):
            bleu_stats("a", [])

    def test_sentence_bleu_plus1(self):
        s = bleu_stats("a b c", ["a b c"])
        # orders 2..4 smoothed: (2+1)/(2+1), (1+1)/(1+1), (0+1)/(0+1)
        assert sentence_bleu_plus1(s) == pytest.approx(1.0)
        s = bleu_stats("a x", ["a b"])
        assert sentence_bleu_plus1(s) == pytest.approx(math.exp((math.log(0.5) + math.log(1 / 2)) / 4))
        assert sentence_bleu_plus1(np.zeros(BLEU_DIM)) == 0.0


class TestTer:
    def test_swap(self):
        assert ter_edits("b a", "a b") == 1
        assert ter("b a", ["a b"]) == 0.5

    def test_identity_and_best_ref(self):
        assert ter("a b c", ["x", "a b c"]) == 0.0
        assert ter("a b", ["a b c d", "a"]) == pytest.approx(min(2 / 4, 1 / 1))

    def test_block_shift(self):
        # moving the block "c d" to the front costs one shift
        assert ter_edits("a b c d", "c d a b") == 1

    def test_levenshtein(self):
        assert levenshtein("kitten", "sitting") == 3
        assert levenshtein([], ["a"]) == 1

    def test_ter_at_most_wer(self):
        rng = random.Random(1)
        for _ in range(1000):
            h, r = random_pair(rng, "abcd")
            t, w = ter(h, [r]), wer(h, [r])
            assert t <= w + 1e-12
            assert (t == 0) == (h == r)

    def test_empty_reference(self):
        with pytest.raises(ValueError):
            ter("a", [""])
        with pytest.raises(ValueError):
            wer("a", [])


class TestRandomization:
    def test_identical_systems(self):
        hyps = ["a b c d", "e f g h", "a a a a"]
        refs = [["a b c d"], ["e f g x"], ["a b a a"]]
        assert approx_randomization(hyps, hyps, refs, R=500) == 1.0

    def test_extreme_pair(self):
        refs = [[f"w{k} x y z q"] for k in range(100)]
        perfect = [r[0] for r in refs]
        empty = [""] * 100
        assert approx_randomization(perfect, empty, refs, R=1000) <= 0.01
        assert approx_randomization(perfect, empty, refs, metric="ter", R=1000) <= 0.01

    def test_symmetric_and_deterministic(self):
        rng = random.Random(2)
        refs = [[" ".join(random_pair(rng)[1])] for _ in range(40)]
        a = [" ".join(random_pair(rng)[0]) + " " + r[0] for r in refs]
        b = [r[0] for r in refs]
        p1 = approx_randomization(a, b, refs, R=300, seed=4)
        assert p1 == approx_randomization(b, a, refs, R=300, seed=4)
        assert p1 == approx_randomization(a, b, refs, R=300, seed=4)
        assert 0 < p1 <= 1

    def test_stars(self):
        assert (stars(0.001), stars(0.03), stars(0.2)) == ("**", "*", "")

    def test_report(self):
        out = score_report(["a b c d"], [["a b c d"]], baseline=["a b c x"], R=50)
        lines = dict(line.split("\t") for line in out.strip().split("\n"))
        assert lines["BLEU"] == "100.00" and lines["TER"] == "0.00" and "p_value" in lines
