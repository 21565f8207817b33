import math
import random
from collections import Counter

import pytest

from catmt.corpusio import BOS, EOS, UNK, CorpusFormatError, GeneratorSpec, generate_synthetic, preprocess_record
from catmt.ngramlm import NgramModel, lm_logprob, perplexity, read_arpa, train_kn, write_arpa

TOY = [["a", "b", "a"], ["b", "a", "c"], ["a", "c"]]


class DirectKN:
    """Literal evaluation of the interpolated modified Kneser-Ney recursion.

    No backoff tables: every probability is recomputed from the count tables
    through the recursion, so it shares nothing with the trained model except
    the formulas themselves.
    """

    def __init__(self, corpus, order, min_count=1, fixed=None):
        wc = Counter(w for s in corpus for w in s)
        keep = {w for w, c in wc.items() if c >= min_count}
        self.order = order
        self.vocab = sorted(keep | {UNK, EOS})  # predictable words
        raw = {k: Counter() for k in range(1, order + 1)}
        for s in corpus:
            toks = [BOS] + [w if w in keep else UNK for w in s] + [EOS]
            for k in range(1, order + 1):
                for p in range(len(toks) - k + 1):
                    raw[k][tuple(toks[p:p + k])] += 1
        self.counts = {order: dict(raw[order])}
        for k in range(1, order):
            left = Counter(g[1:] for g in raw[k + 1])
            self.counts[k] = {g: (c if g[0] == BOS else left[g]) for g, c in raw[k].items()}
            self.counts[k] = {g: c for g, c in self.counts[k].items() if c > 0 and g != (BOS,)}
        self.D = {}
        for k in range(1, order + 1):
            n = Counter(self.counts[k].values())
            n1, n2, n3, n4 = n[1], n[2], n[3], n[4]
            if fixed is not None or 0 in (n1, n2, n3, n4):
                self.D[k] = (fixed or 0.75,) * 3
            else:
                y = n1 / (n1 + 2 * n2)
                self.D[k] = (1 - 2 * y * n2 / n1, 2 - 3 * y * n3 / n2, 3 - 4 * y * n4 / n3)

    def d(self, k, c):
        return self.D[k][min(c, 3) - 1]

    def prob(self, h, w):
        k = len(h) + 1
        if k == 1:
            cs = self.counts[1]
            total = sum(cs.values())
            gamma = sum(self.d(1, c) for c in cs.values()) / total
            c = cs.get((w,), 0)
            return max(c - self.d(1, c), 0) / total + gamma / len(self.vocab) if c else gamma / len(self.vocab)
        items = {g[-1]: c for g, c in self.counts[k].items() if g[:-1] == tuple(h)}
        lower = self.prob(h[1:], w)
        if not items:
            return lower
        denom = sum(items.values())
        gamma = sum(self.d(k, c) for c in items.values()) / denom
        c = items.get(w, 0)
        return (c - self.d(k, c)) / denom + gamma * lower if c else gamma * lower


def random_corpus(rng, n, vocab="abcdefgh", lo=1, hi=8):
    return [[rng.choice(vocab) for _ in range(rng.randint(lo, hi))] for _ in range(n)]


def histories(model, rng, n):
    words = model.predictable() + [BOS]
    return [[rng.choice(words) for _ in range(rng.randint(0, model.order - 1))] for _ in range(n)]


class TestDirectEvaluation:
    def test_toy_bigram_fixed_discount(self):
        # three sentences: count-of-counts are too sparse, so the fixed discount is used
        lm = train_kn(TOY, order=2, min_count=1)
        assert all(lm.fallback)
        ref = DirectKN(TOY, 2, fixed=0.75)
        for h in ([], [BOS], ["a"], ["b"], ["c"]):
            for w in ref.vocab:
                assert math.exp(lm.logprob(h, w)) == pytest.approx(ref.prob(tuple(h[-1:]), w), abs=1e-9)

    def test_toy_bigram_hand_values(self):
        lm = train_kn(TOY, order=2, min_count=1)
        # unigram continuation counts: a<-{<s>,b}=2, b<-{<s>,a}=2, c<-{a}=1, </s><-{a,c}=2; total 7
        # gamma0 = 4 * 0.75 / 7, uniform over {a, b, c, </s>, <unk>}
        g0 = 3.0 / 7
        p_c = (1 - 0.75) / 7 + g0 / 5
        p_unk = g0 / 5
        assert math.exp(lm.logprob([], "c")) == pytest.approx(p_c, abs=1e-12)
        assert math.exp(lm.logprob([], "zzz")) == pytest.approx(p_unk, abs=1e-12)
        # context 'b': b a (x2) -> p(a|b) = (2 - .75)/2 + (.75/2) p(a)
        p_a = (2 - 0.75) / 7 + g0 / 5
        assert math.exp(lm.logprob(["b"], "a")) == pytest.approx(1.25 / 2 + 0.375 * p_a, abs=1e-12)

    def test_trigram_modified_discounts(self):
        rng = random.Random(3)
        words = [f"w{k}" for k in range(40)]
        corpus = [rng.choices(words, weights=[1 / (k + 1) for k in range(40)], k=rng.randint(1, 8))
                  for _ in range(400)]
        lm = train_kn(corpus, order=3, min_count=1)
        # the unigram level has too few rare types and keeps the fixed discount
        assert lm.fallback == [True, False, False]
        ref = DirectKN(corpus, 3)
        for h in histories(lm, rng, 60):
            h = tuple(h[-2:])
            if len(h) == 2 and h[1] == BOS:
                continue  # <s> only starts a history
            for w in ref.vocab:
                assert math.exp(lm.logprob(list(h), w)) == pytest.approx(ref.prob(h, w), abs=1e-9)

    def test_min_count_maps_to_unk(self):
        corpus = [["a", "b"], ["a", "c"], ["a", "b"]]
        lm = train_kn(corpus, order=2, min_count=2)
        ref = DirectKN(corpus, 2, min_count=2, fixed=0.75)
        assert "c" not in lm.vocab
        assert lm.logprob(["a"], "c") == lm.logprob(["a"], UNK)
        assert math.exp(lm.logprob(["a"], UNK)) == pytest.approx(ref.prob(("a",), UNK), abs=1e-12)


class TestNormalization:
    @pytest.mark.parametrize("order", [1, 2, 3, 4])
    def test_sums_to_one(self, order):
        rng = random.Random(order)
        lm = train_kn(random_corpus(rng, 200), order=order, min_count=2)
        for h in histories(lm, rng, 100):
            total = sum(math.exp(lm.logprob(h, w)) for w in lm.predictable())
            assert total == pytest.approx(1.0, abs=1e-6)

    def test_bos_never_predicted_unk_finite(self):
        lm = train_kn(TOY, order=3, min_count=1)
        assert BOS not in lm.predictable() and EOS in lm.predictable()
        assert math.isfinite(lm_logprob(lm, ["q", "r"], "never-seen"))
        assert lm_logprob(lm, [BOS], "a") < 0

    def test_backoff_identity(self):
        lm = train_kn(TOY, order=2, min_count=1)
        # (c, a) never occurs, context c is observed
        assert ("c", "a") not in lm.probs[2]
        want = lm.backoffs[1][("c",)] + lm.probs[1][("a",)]
        assert lm.logprob(["c"], "a") == pytest.approx(want, abs=1e-15)

    def test_duplicated_corpus_fixed_discount(self):
        rng = random.Random(5)
        corpus = random_corpus(rng, 50)
        a = train_kn(corpus, order=3, min_count=1, force_fallback=True)
        b = train_kn(corpus * 2, order=3, min_count=1, force_fallback=True)
        # Absolute discounting is not scale-free, so only the levels built from
        # continuation counts (which duplication leaves alone) are unchanged:
        # unigrams and lower-order n-grams whose context is not <s>.
        checked = 0
        for k in (1, 2):
            for g, p in a.probs[k].items():
                if g[0] != BOS:
                    assert b.probs[k][g] == pytest.approx(p, abs=1e-12)
                    checked += 1
        assert checked > 20
        top = [g for g in a.probs[3] if g[0] != BOS]
        assert any(abs(a.probs[3][g] - b.probs[3][g]) > 1e-6 for g in top)


class TestPerplexity:
    def test_uniform_unigram(self):
        V = 7
        words = [f"w{k}" for k in range(V - 2)] + [UNK, EOS]
        probs = [None, {(w,): -math.log(V) for w in words}]
        probs[1][(BOS,)] = -99.0
        lm = NgramModel(1, probs, [None, {}])
        assert perplexity(lm, [["w0", "w3"], ["zz"]]) == pytest.approx(V)

    def test_memorized_sentence(self):
        sent = ["x", "y", "z"]
        lm = train_kn([sent], order=4, min_count=1)
        direct = sum(lm.logprob(([BOS] + sent)[:k + 1], w) for k, w in enumerate(sent + [EOS]))
        ppl = perplexity(lm, [sent])
        assert ppl == pytest.approx(math.exp(-direct / 4))
        assert ppl < 2.0

    def test_train_below_heldout(self):
        c = generate_synthetic(GeneratorSpec(n_train=1000, n_dev=200, n_test=0, seed=2))
        train = [preprocess_record(r).target for r in c.train]
        held = [preprocess_record(r).target for r in c.dev]
        lm = train_kn(train, order=3, min_count=1)
        assert perplexity(lm, train) <= perplexity(lm, held)


class TestArpa:
    def test_roundtrip(self, tmp_path):
        rng = random.Random(9)
        lm = train_kn(random_corpus(rng, 100), order=3, min_count=2)
        write_arpa(lm, tmp_path / "a.arpa")
        back = read_arpa(tmp_path / "a.arpa")
        assert back.fallback == lm.fallback
        for h in histories(lm, rng, 50):
            for w in lm.predictable() + ["oov"]:
                assert back.logprob(h, w) == pytest.approx(lm.logprob(h, w), abs=1e-6)
        write_arpa(back, tmp_path / "b.arpa")
        assert (tmp_path / "a.arpa").read_bytes() == (tmp_path / "b.arpa").read_bytes()

    def test_header_counts(self, tmp_path):
        lm = train_kn(TOY, order=3, min_count=1)
        write_arpa(lm, tmp_path / "a.arpa")
        text = (tmp_path / "a.arpa").read_text()
        for k in (1, 2, 3):
            assert f"ngram {k}={len(lm.probs[k])}" in text
            section = text.split(f"\\{k}-grams:\n")[1].split("\n\n")[0].strip().split("\n")
            assert len(section) == len(lm.probs[k])

    def test_deterministic(self, tmp_path):
        write_arpa(train_kn(TOY, 3, 1), tmp_path / "a")
        write_arpa(train_kn(TOY, 3, 1), tmp_path / "b")
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_malformed_section(self, tmp_path):
        p = tmp_path / "bad.arpa"
        p.write_text("\\data\\\nngram 1=1\n\n\\one-grams:\n-1.0\t<unk>\n\\end\\\n")
        with pytest.raises(CorpusFormatError) as exc:
            read_arpa(p)
        assert exc.value.line == 4
        p.write_text("\\data\\\nngram 1=2\n\n\\1-grams:\n-1.0\t<unk>\n\\end\\\n")
        with pytest.raises(CorpusFormatError):
            read_arpa(p)

    def test_training_errors(self):
        with pytest.raises(ValueError):
            train_kn([], order=3)
        with pytest.raises(ValueError):
            train_kn(TOY, order=0)
