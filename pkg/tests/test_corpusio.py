"""Preprocessing, corpus files, vocabularies and the synthetic generator."""

from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from catmt.corpusio import (
    NUM,
    RESERVED,
    SPEC,
    CategorySet,
    CorpusFormatError,
    GeneratorSpec,
    ParallelRecord,
    PreprocessConfig,
    SenseTable,
    Vocabulary,
    build_vocabulary,
    generate_synthetic,
    polysemy_accuracy,
    preprocess,
    read_corpus,
    write_corpus,
    write_synthetic,
)

CATS = CategorySet(["Clothing", "Electronics", "Other"])


class TestPreprocess:
    def test_placeholders(self):
        assert preprocess("Apple iPhone 6S 64GB") == ("apple", "iphone", SPEC, SPEC)
        assert preprocess("Size 10") == ("size", NUM)
        assert preprocess("") == ()

    def test_separated_numbers(self):
        assert preprocess("1,299.99 euro") == (NUM, "euro")
        assert preprocess("1080p, 4k!") == (SPEC, ",", SPEC, "!")

    def test_punctuation_split(self):
        assert preprocess("T-shirt (red)") == ("t", "-", "shirt", "(", "red", ")")

    def test_case_kept_without_lowercase(self):
        rules = PreprocessConfig(lowercase=False)
        assert preprocess("Red 6S", rules) == ("Red", SPEC)

    def test_rules_off(self):
        rules = PreprocessConfig(numbers=False, specs=False)
        assert preprocess("size 10 6s") == ("size", NUM, SPEC)
        assert preprocess("size 10 6s", rules) == ("size", "10", "6s")

    @given(st.text(max_size=60))
    @settings(max_examples=300, deadline=None)
    def test_idempotent(self, raw):
        once = preprocess(raw)
        assert preprocess(" ".join(once)) == once


class TestCorpusFiles:
    def test_read_train_line(self, tmp_path):
        p = tmp_path / "c.tsv"
        p.write_text("red apple shoes\tscarpe mela rossa\tClothing\n", encoding="utf-8")
        (rec,) = read_corpus(p, CATS)
        assert rec.source == ("red", "apple", "shoes")
        assert rec.target == ("scarpe", "mela", "rossa")
        assert CATS.label_of(rec.category) == "Clothing"

    def test_malformed_line_reports_number(self, tmp_path):
        p = tmp_path / "c.tsv"
        p.write_text("a\tb\tOther\nonly two\tfields\n", encoding="utf-8")
        with pytest.raises(CorpusFormatError) as exc:
            read_corpus(p, CATS)
        assert exc.value.line == 2

    def test_unknown_label_named(self, tmp_path):
        p = tmp_path / "c.tsv"
        p.write_text("a\tb\tGarden\n", encoding="utf-8")
        with pytest.raises(CorpusFormatError, match="Garden"):
            read_corpus(p, CATS)

    def test_test_format_multiple_refs(self, tmp_path):
        p = tmp_path / "t.tsv"
        p.write_text("a b\tOther\tx y\tx z\n", encoding="utf-8")
        (rec,) = read_corpus(p, CATS, "test")
        assert rec.references == (("x", "y"), ("x", "z"))

    def test_category_sidecar_roundtrip(self, tmp_path):
        CATS.write(tmp_path / "cats.txt")
        assert CategorySet.read(tmp_path / "cats.txt") == CATS

    def test_category_set_validation(self):
        with pytest.raises(ValueError):
            CategorySet(["one"])
        with pytest.raises(ValueError):
            CategorySet(["a", "a"])

    words = st.lists(st.text(alphabet="abcxyz<>.", min_size=1, max_size=5), min_size=1, max_size=6).map(tuple)
    records = st.lists(
        st.builds(ParallelRecord, words, words, st.integers(0, 2), st.lists(words, max_size=2).map(tuple)),
        max_size=8)

    @given(records)
    @settings(max_examples=100, deadline=None)
    def test_roundtrip_property(self, tmp_path_factory, recs):
        d = tmp_path_factory.mktemp("rt")
        write_corpus(recs, d / "test.tsv", CATS, "test")
        assert read_corpus(d / "test.tsv", CATS, "test") == recs
        train = [ParallelRecord(r.source, r.target, r.category) for r in recs]
        write_corpus(train, d / "train.tsv", CATS, "train")
        assert read_corpus(d / "train.tsv", CATS, "train") == train


class TestVocabulary:
    def test_reserved_layout(self):
        v = Vocabulary(["x"])
        assert v.itos[:5] == list(RESERVED)
        assert (v.unk_id, v.bos_id, v.eos_id, v.num_id, v.spec_id) == (0, 1, 2, 3, 4)

    def test_frequency_order(self):
        v = build_vocabulary([["a", "a", "b"]], max_size=10)
        assert v.itos[5:] == ["a", "b"]

    def test_tie_lexicographic(self):
        v = build_vocabulary([["b", "a"]], max_size=10)
        assert v.itos[5:] == ["a", "b"]

    def test_min_count(self):
        v = build_vocabulary([["a", "a", "b"]], max_size=10, min_count=2)
        assert v.itos[5:] == ["a"]
        assert v.index("b") == v.unk_id

    def test_cap_counts_reserved(self):
        v = build_vocabulary([list("aabbbc")], max_size=7)
        assert v.itos[5:] == ["b", "a"]
        with pytest.raises(ValueError):
            build_vocabulary([], max_size=4)

    def test_placeholders_not_duplicated(self):
        v = build_vocabulary([[NUM, NUM, "a"]])
        assert v.itos[5:] == ["a"]

    def test_lookup_inverse_and_file(self, tmp_path):
        v = build_vocabulary([list("the quick brown fox jumps over the lazy dog")])
        for i in range(5, len(v)):
            assert v.index(v.token(i)) == i
        v.write(tmp_path / "v.txt")
        assert Vocabulary.read(tmp_path / "v.txt").itos == v.itos


@pytest.fixture(scope="module")
def small_corpus():
    spec = GeneratorSpec(n_train=10000, n_dev=50, n_test=50, n_polysemous=5, filler_vocab_size=40, seed=7)
    return spec, generate_synthetic(spec)


class TestGenerator:
    def test_deterministic_bytes(self, tmp_path):
        spec = GeneratorSpec(n_train=200, n_dev=20, n_test=20, seed=3)
        write_synthetic(generate_synthetic(spec), tmp_path / "a")
        write_synthetic(generate_synthetic(spec), tmp_path / "b")
        for name in ("train.tsv", "dev.tsv", "test.tsv", "senses.tsv", "categories.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_sense_is_function_of_word_and_category(self, small_corpus):
        _, corpus = small_corpus
        for split in (corpus.train, corpus.dev, corpus.test):
            for rec in split:
                if rec.target and rec.source:
                    for f in rec.source:
                        if f in corpus.senses.by_category:
                            assert corpus.senses.target(f, rec.category) in rec.target

    def test_senses_distinct_per_word(self, small_corpus):
        _, corpus = small_corpus
        for w, by_cat in corpus.senses.by_category.items():
            assert len(set(by_cat)) == 2
            assert Counter(by_cat).most_common(1)[0][0] == corpus.senses.majority(w)

    def test_sense_skew(self, small_corpus):
        spec, corpus = small_corpus
        # Monte-Carlo oracle: ~2000 draws per word, binomial sd ~0.009
        maj = Counter()
        tot = Counter()
        for rec in corpus.train:
            for f in rec.source:
                if f in corpus.senses.by_category:
                    tot[f] += 1
                    maj[f] += corpus.senses.target(f, rec.category) == corpus.senses.majority(f)
        pooled = sum(maj.values()) / sum(tot.values())
        assert 0.78 <= pooled <= 0.82
        for f in tot:
            assert abs(maj[f] / tot[f] - spec.sense_skew) < 0.05

    def test_no_swap_is_monotone(self):
        spec = GeneratorSpec(n_train=300, n_dev=0, n_test=0, swap_prob=0.0, seed=11)
        corpus = generate_synthetic(spec)
        senses = corpus.senses
        # oracle: word-by-word map learned from the data must reproduce every target
        lex = {}
        for rec in corpus.train:
            assert len(rec.source) == len(rec.target)
            for f, e in zip(rec.source, rec.target):
                if f.lower() in senses.by_category:
                    assert e == senses.target(f.lower(), rec.category)
                else:
                    assert lex.setdefault(f.lower(), e) == e

    def test_spec_roundtrip_and_validation(self, tmp_path):
        spec = GeneratorSpec(n_train=10, title_len_range=(2, 3), sense_skew=0.7)
        spec.write(tmp_path / "g.cfg")
        assert GeneratorSpec.read(tmp_path / "g.cfg") == spec
        with pytest.raises(ValueError):
            GeneratorSpec(sense_skew=0.5).validate()
        with pytest.raises(ValueError):
            GeneratorSpec(n_polysemous=10 ** 6).validate()
        with pytest.raises(CorpusFormatError):
            GeneratorSpec.from_dict({"bogus": "1"})

    def test_sense_table_file(self, tmp_path, small_corpus):
        _, corpus = small_corpus
        corpus.senses.write(tmp_path / "s.tsv", corpus.categories)
        back = SenseTable.read(tmp_path / "s.tsv", corpus.categories)
        assert back.by_category == corpus.senses.by_category
        assert back.senses == corpus.senses.senses

    def test_polysemy_accuracy(self, small_corpus):
        _, corpus = small_corpus
        recs = corpus.test
        assert polysemy_accuracy([r.target for r in recs], recs, corpus.senses) == 1.0
        majority = [[corpus.senses.majority(f) if f in corpus.senses.by_category else f for f in r.source]
                     for r in recs]
        expected = np.mean([corpus.senses.target(f, r.category) == corpus.senses.majority(f)
                            for r in recs for f in r.source if f in corpus.senses.by_category])
        assert polysemy_accuracy(majority, recs, corpus.senses) == pytest.approx(expected)
