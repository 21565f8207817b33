import itertools
import random
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from catmt.align import (
    NULL,
    AlignmentMatrix,
    TTable,
    affiliate,
    align_corpus,
    read_alignments,
    symmetrize,
    train_ibm1,
    viterbi_align,
    write_alignments,
)


def em_reference(pairs, iterations, include_null=True):
    """Direct dictionary EM for Model 1, written independently of the vectorized trainer."""
    tgt_words = {e for _, t in pairs for e in t}
    t = defaultdict(lambda: 1.0 / len(tgt_words))
    for _ in range(iterations):
        count = defaultdict(float)
        total = defaultdict(float)
        for src, tgt in pairs:
            fs = ([NULL] if include_null else []) + list(src)
            for e in tgt:
                z = sum(t[(e, f)] for f in fs)
                for f in fs:
                    c = t[(e, f)] / z
                    count[(e, f)] += c
                    total[f] += c
        t = defaultdict(float, {(e, f): c / total[f] for (e, f), c in count.items()})
    return t


class TestIbm1:
    def test_single_pair(self):
        table = train_ibm1([(["a"], ["x"])], iterations=3, include_null=False)
        assert table.prob("x", "a") == pytest.approx(1.0, abs=1e-9)

    def test_matches_direct_em(self):
        pairs = [(["a", "b"], ["x", "y"]), (["a"], ["x"]), (["b", "c"], ["y", "z", "x"])]
        for null in (False, True):
            ref = em_reference(pairs, 3, null)
            table = train_ibm1(pairs, iterations=3, include_null=null)
            for (e, f), p in ref.items():
                assert table.probs[table.src_index[f], table.tgt_index[e]] == pytest.approx(p, abs=1e-12)

    def test_classic_converges(self):
        pairs = [(["a", "b"], ["x", "y"]), (["a"], ["x"])]
        # by hand, iteration 1: counts x|a = 1/2 + 1, y|a = 1/2 -> t(x|a) = 3/4
        assert em_reference(pairs, 1, include_null=False)[("x", "a")] == pytest.approx(0.75)
        seq = [em_reference(pairs, k, include_null=False)[("x", "a")] for k in (1, 2, 3)]
        assert seq[0] < seq[1] < seq[2]
        table = train_ibm1(pairs, iterations=30, include_null=False)
        assert table.prob("x", "a") > 0.999
        # y|b converges sublinearly once x|a is saturated
        longer = train_ibm1(pairs, iterations=200, include_null=False)
        assert 0.95 < table.prob("y", "b") < longer.prob("y", "b") < 1.0

    def test_normalization_and_monotone_loglik(self):
        rng = random.Random(0)
        pairs = [([rng.choice("abcde") for _ in range(rng.randint(1, 5))],
                  [rng.choice("vwxyz") for _ in range(rng.randint(1, 5))]) for _ in range(40)]
        table = train_ibm1(pairs, iterations=5)
        np.testing.assert_allclose(table.probs.sum(axis=1), 1.0, atol=1e-9)
        assert len(table.loglik) == 6
        assert all(b >= a - 1e-9 for a, b in zip(table.loglik, table.loglik[1:]))

    def test_bad_args(self):
        with pytest.raises(ValueError):
            train_ibm1([(["a"], ["x"])], iterations=0)
        with pytest.raises(ValueError):
            train_ibm1([], iterations=1)

    def test_file_roundtrip(self, tmp_path):
        table = train_ibm1([(["a", "b"], ["x", "y"]), (["a"], ["x"])], 3)
        table.write(tmp_path / "t.txt", threshold=0.0)
        back = TTable.read(tmp_path / "t.txt")
        for f in table.src_vocab:
            for e in table.tgt_vocab:
                assert back.prob(e, f) == pytest.approx(table.prob(e, f), abs=1e-15)


class TestViterbi:
    def test_identity_lexicon_diagonal(self):
        words = ["a", "b", "c"]
        t = TTable([NULL] + words, ["x", "y", "z"], np.vstack([np.full(3, 0.01), np.eye(3) * 0.9 + 0.01]))
        a = viterbi_align(t, words, ["x", "y", "z"])
        assert a.links == {(0, 0), (1, 1), (2, 2)}

    def test_all_null(self):
        t = TTable([NULL, "a"], ["x"], np.array([[1.0], [0.0]]))
        assert viterbi_align(t, ["a", "a"], ["x", "x"]).links == frozenset()

    def test_brute_force_argmax(self):
        pairs = [(["a", "b"], ["x", "y"]), (["a"], ["x"]), (["b", "c"], ["z", "y"])]
        table = train_ibm1(pairs, 3)
        for src, tgt in pairs + [(["c", "a", "b"], ["x", "z", "y", "x"])]:
            got = viterbi_align(table, src, tgt)
            want = set()
            for i, e in enumerate(tgt):
                cands = [(table.prob(e, None), -1)] + [(table.prob(e, f), j) for j, f in enumerate(src)]
                best = max(p for p, _ in cands)
                j = min(j for p, j in cands if p == best)
                if j >= 0:
                    want.add((j, i))
            assert got.links == want

    def test_unseen_floor(self):
        table = train_ibm1([(["a"], ["x"])], 2)
        assert table.prob("q", "a") == 1e-12
        assert viterbi_align(table, ["zz"], ["x"]).links == frozenset()


def random_alignment(rng, J, I, p=0.3):
    return AlignmentMatrix(J, I, frozenset((j, i) for j in range(J) for i in range(I) if rng.random() < p))


class TestSymmetrize:
    def test_equal_inputs(self):
        rng = random.Random(1)
        for _ in range(50):
            a = random_alignment(rng, rng.randint(1, 6), rng.randint(1, 6))
            for h in ("intersection", "union", "grow-diag"):
                assert symmetrize(a, a, h) == a

    def test_disjoint_intersection_empty(self):
        a = AlignmentMatrix(2, 2, {(0, 0)})
        b = AlignmentMatrix(2, 2, {(1, 1)})
        assert symmetrize(a, b, "intersection").links == frozenset()
        assert symmetrize(a, b, "union").links == {(0, 0), (1, 1)}

    def test_hand_trace(self):
        # intersection {(0,0), (2,2)}; union adds (1,1) and (0,2).
        # (1,1) is a diagonal neighbour of (0,0) and covers unaligned row 1 / column 1 -> added.
        # (0,2) neighbours (1,1) diagonally but row 0 and column 2 are both aligned -> rejected.
        fwd = AlignmentMatrix(3, 3, {(0, 0), (1, 1), (2, 2)})
        bwd = AlignmentMatrix(3, 3, {(0, 0), (2, 2), (0, 2)})
        assert symmetrize(fwd, bwd).links == {(0, 0), (1, 1), (2, 2)}
        # a union point two cells away from every intersection point is never reached
        bwd2 = AlignmentMatrix(3, 3, {(0, 0), (2, 2), (0, 2)})
        fwd2 = AlignmentMatrix(3, 3, {(0, 0), (2, 2)})
        assert symmetrize(fwd2, bwd2).links == {(0, 0), (2, 2)}

    def test_sandwich(self):
        rng = random.Random(2)
        for _ in range(100):
            J, I = rng.randint(1, 6), rng.randint(1, 6)
            a, b = random_alignment(rng, J, I), random_alignment(rng, J, I)
            g = symmetrize(a, b).links
            assert a.links & b.links <= g <= a.links | b.links

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            symmetrize(AlignmentMatrix(2, 2, set()), AlignmentMatrix(2, 3, set()))


class TestAffiliate:
    def test_diagonal(self):
        assert affiliate(AlignmentMatrix(4, 4, {(k, k) for k in range(4)})) == [0, 1, 2, 3]

    def test_even_count_lower_middle(self):
        assert affiliate(AlignmentMatrix(4, 1, {(1, 0), (3, 0)})) == [1]
        assert affiliate(AlignmentMatrix(5, 1, {(0, 0), (2, 0), (4, 0)})) == [2]

    def test_inheritance(self):
        assert affiliate(AlignmentMatrix(3, 3, {(2, 0)})) == [2, 2, 2]
        # target 1 sits between linked 0 (j=0) and linked 2 (j=3): tie goes right
        assert affiliate(AlignmentMatrix(4, 3, {(0, 0), (3, 2)})) == [0, 3, 3]

    def test_no_links(self):
        assert affiliate(AlignmentMatrix(2, 4, set())) == [0, 1, 1, 1]

    @given(st.integers(1, 6), st.integers(1, 6), st.data())
    @settings(max_examples=200, deadline=None)
    def test_total_and_order_free(self, J, I, data):
        cells = list(itertools.product(range(J), range(I)))
        links = data.draw(st.lists(st.sampled_from(cells), unique=True))
        b = affiliate(AlignmentMatrix(J, I, frozenset(links)))
        assert len(b) == I and all(0 <= x < J for x in b)
        assert affiliate(AlignmentMatrix(J, I, frozenset(reversed(links)))) == b


class TestCorpus:
    def test_align_corpus_and_files(self, tmp_path):
        pairs = [(["a", "b"], ["x", "y"]), (["a"], ["x"]), (["b"], ["y"]), (["b", "a"], ["y", "x"])]
        alignments, fwd, bwd = align_corpus(pairs, iterations=10)
        assert alignments[0].links == {(0, 0), (1, 1)}
        assert alignments[3].links == {(0, 0), (1, 1)}
        write_alignments(alignments, tmp_path / "a.txt")
        assert read_alignments(tmp_path / "a.txt", pairs) == alignments
        with pytest.raises(ValueError):
            read_alignments(tmp_path / "a.txt", pairs[:2])

    def test_pharaoh(self):
        a = AlignmentMatrix.from_pharaoh("0-1 1-0", 2, 2)
        assert a.to_pharaoh() == "0-1 1-0"
        assert a.transpose().links == {(1, 0), (0, 1)}
        with pytest.raises(ValueError):
            AlignmentMatrix(1, 1, {(1, 0)})
