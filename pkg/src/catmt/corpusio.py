"""Text preprocessing, corpus files, vocabularies and the synthetic polysemy corpus.

Corpora are lists of :class:`ParallelRecord`.  Tokens are plain strings; a
token sequence is a tuple of strings.  Two TSV layouts are supported::

    train:     source \\t target \\t category_label
    dev/test:  source \\t category_label \\t ref1 [\\t ref2 ...]

Category labels are resolved through a :class:`CategorySet`, normally read
from a sidecar file with one label per line.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

UNK, BOS, EOS, NUM, SPEC = "<unk>", "<s>", "</s>", "<num>", "<spec>"
RESERVED = (UNK, BOS, EOS, NUM, SPEC)

_TOKEN_RE = re.compile(r"<num>|<spec>|\d+(?:[.,]\d+)+|\w+|[^\w\s]")
_NUM_RE = re.compile(r"^\d+(?:[.,]\d+)*$")
_ALNUM_RE = re.compile(r"^[^\W_]+$")


class CorpusFormatError(ValueError):
    """Malformed corpus or sidecar file; carries the 1-based line number."""

    def __init__(self, message: str, path=None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


# ---------------------------------------------------------------------------
# preprocessing


@dataclass(frozen=True)
class PreprocessConfig:
    lowercase: bool = True
    numbers: bool = True
    specs: bool = True


def _is_spec(tok: str) -> bool:
    if not _ALNUM_RE.match(tok):
        return False
    has_digit = any(ch.isdigit() for ch in tok)
    has_alpha = any(ch.isalpha() for ch in tok)
    return has_digit and has_alpha


def preprocess(raw: str, rules: PreprocessConfig = PreprocessConfig()) -> tuple[str, ...]:
    """Tokenize ``raw`` and replace numbers / product specifications by placeholders.

    >>> preprocess("Apple iPhone 6S 64GB")
    ('apple', 'iphone', '<spec>', '<spec>')
    """
    if rules.lowercase:
        # before tokenizing: lowercasing may change character classes
        raw = raw.lower()
    out = []
    for tok in _TOKEN_RE.findall(raw):
        if rules.numbers and _NUM_RE.match(tok):
            tok = NUM
        elif rules.specs and _is_spec(tok):
            tok = SPEC
        out.append(tok)
    return tuple(out)


def preprocess_record(rec: "ParallelRecord", rules: PreprocessConfig = PreprocessConfig()) -> "ParallelRecord":
    return ParallelRecord(
        source=preprocess(" ".join(rec.source), rules),
        target=preprocess(" ".join(rec.target), rules),
        category=rec.category,
        extra_refs=tuple(preprocess(" ".join(r), rules) for r in rec.extra_refs),
    )


# ---------------------------------------------------------------------------
# categories and records


class CategorySet:
    """Ordered label set; line order of the sidecar file defines the ids."""

    def __init__(self, labels: Sequence[str]):
        labels = list(labels)
        if len(labels) < 2:
            raise ValueError("need at least two categories")
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate category label")
        for lab in labels:
            if not lab or any(ch.isspace() for ch in lab):
                raise ValueError(f"invalid category label {lab!r}")
        self.labels = labels
        self._ids = {lab: i for i, lab in enumerate(labels)}

    def __len__(self):
        return len(self.labels)

    def __eq__(self, other):
        return isinstance(other, CategorySet) and self.labels == other.labels

    def __repr__(self):
        return f"CategorySet({self.labels!r})"

    def id_of(self, label: str) -> int:
        try:
            return self._ids[label]
        except KeyError:
            raise KeyError(f"unknown category label {label!r}") from None

    def label_of(self, cid: int) -> str:
        return self.labels[cid]

    @classmethod
    def read(cls, path) -> "CategorySet":
        labels = []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                lab = line.rstrip("\n")
                if not lab.strip():
                    continue
                if lab != lab.strip() or "\t" in lab:
                    raise CorpusFormatError(f"bad category label {lab!r}", path, lineno)
                labels.append(lab)
        try:
            return cls(labels)
        except ValueError as e:
            raise CorpusFormatError(str(e), path) from None

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for lab in self.labels:
                f.write(lab + "\n")


@dataclass(frozen=True)
class ParallelRecord:
    source: tuple
    target: tuple
    category: int
    extra_refs: tuple = ()

    @property
    def references(self) -> tuple:
        return (self.target,) + tuple(self.extra_refs)


def _split_tokens(s: str) -> tuple[str, ...]:
    return tuple(s.split())


def read_corpus(path, categories: CategorySet, format: str = "train") -> list[ParallelRecord]:
    """Read a TSV corpus.  ``format`` is ``"train"`` or ``"test"`` (also used for dev)."""
    if format not in ("train", "test"):
        raise ValueError(f"unknown corpus format {format!r}")
    records = []
    with open(path, encoding="utf-8", newline="") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n").rstrip("\r")
            parts = line.split("\t")
            if format == "train":
                if len(parts) != 3:
                    raise CorpusFormatError(f"expected 3 tab-separated fields, got {len(parts)}", path, lineno)
                src, tgt, lab = parts
                refs = ()
            else:
                if len(parts) < 3:
                    raise CorpusFormatError(f"expected >= 3 tab-separated fields, got {len(parts)}", path, lineno)
                src, lab = parts[0], parts[1]
                tgt = parts[2]
                refs = tuple(_split_tokens(r) for r in parts[3:])
            src_t, tgt_t = _split_tokens(src), _split_tokens(tgt)
            if format == "train" and (not src_t or not tgt_t):
                raise CorpusFormatError("empty source or target", path, lineno)
            if not src_t:
                raise CorpusFormatError("empty source", path, lineno)
            try:
                cid = categories.id_of(lab)
            except KeyError:
                raise CorpusFormatError(f"unknown category label {lab!r}", path, lineno) from None
            records.append(ParallelRecord(src_t, tgt_t, cid, refs))
    return records


def write_corpus(records: Iterable[ParallelRecord], path, categories: CategorySet, format: str = "train") -> None:
    if format not in ("train", "test"):
        raise ValueError(f"unknown corpus format {format!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for rec in records:
            lab = categories.label_of(rec.category)
            if format == "train":
                f.write(f"{' '.join(rec.source)}\t{' '.join(rec.target)}\t{lab}\n")
            else:
                refs = "\t".join(" ".join(r) for r in rec.references)
                f.write(f"{' '.join(rec.source)}\t{lab}\t{refs}\n")


# ---------------------------------------------------------------------------
# vocabulary


class Vocabulary:
    """Token <-> index map with the five reserved entries at indices 0..4."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.itos = list(RESERVED)
        for t in tokens:
            if t in RESERVED:
                continue
            self.itos.append(t)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate token in vocabulary")

    unk_id, bos_id, eos_id, num_id, spec_id = range(5)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, tok):
        return tok in self.stoi

    def index(self, tok: str) -> int:
        return self.stoi.get(tok, 0)

    def token(self, idx: int) -> str:
        return self.itos[idx]

    def encode(self, toks: Iterable[str]) -> list[int]:
        get = self.stoi.get
        return [get(t, 0) for t in toks]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for t in self.itos:
                f.write(t + "\n")

    @classmethod
    def read(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            toks = [line.rstrip("\n") for line in f]
        if tuple(toks[:5]) != RESERVED:
            raise CorpusFormatError("vocabulary file must start with the reserved tokens", path, 1)
        return cls(toks[5:])


def build_vocabulary(corpus: Iterable[Sequence[str]], max_size: int = 2000, min_count: int = 1) -> Vocabulary:
    """Most frequent tokens with count >= ``min_count``; ties broken lexicographically.

    ``max_size`` counts the reserved entries.
    """
    if max_size < len(RESERVED):
        raise ValueError("max_size must be >= 5")
    counts = Counter()
    for sent in corpus:
        counts.update(sent)
    for r in RESERVED:
        counts.pop(r, None)
    ranked = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(ranked[: max_size - len(RESERVED)])


# ---------------------------------------------------------------------------
# synthetic polysemy corpus

DEFAULT_LABELS = ("Clothing", "Electronics", "Home", "Motors", "Toys", "Other")

_SRC_ONSETS = "bdfgklmnprstvz"
_SRC_VOWELS = "aeiou"
_SRC_CODAS = "klmnrst"
_TGT_ONSETS = "bcdfglmnprstv"
_TGT_VOWELS = "aeiou"
_UNITS = ("gb", "mm", "cm", "kg", "p", "s", "ml", "w", "mah", "tb")


@dataclass
class GeneratorSpec:
    n_train: int = 5000
    n_dev: int = 500
    n_test: int = 500
    n_categories: int = 6
    n_polysemous: int = 20
    n_senses: int = 2
    sense_skew: float = 0.8
    filler_vocab_size: int = 300
    title_len_range: tuple = (4, 8)
    swap_prob: float = 0.1
    topic_prob: float = 0.0
    spec_prob: float = 0.1
    zipf_exponent: float = 1.0
    seed: int = 1

    def validate(self) -> None:
        if min(self.n_train, self.n_dev, self.n_test) < 0:
            raise ValueError("corpus sizes must be non-negative")
        if self.n_categories < 2:
            raise ValueError("n_categories must be >= 2")
        if self.n_senses < 2:
            raise ValueError("each polysemous word needs >= 2 senses")
        if self.n_senses > self.n_categories:
            raise ValueError("n_senses cannot exceed n_categories")
        if not 0.5 < self.sense_skew < 1.0:
            raise ValueError("sense_skew must lie in (0.5, 1.0)")
        lo, hi = self.title_len_range
        if not 1 <= lo <= hi:
            raise ValueError("bad title_len_range")
        if not 0.0 <= self.swap_prob <= 1.0:
            raise ValueError("swap_prob must lie in [0, 1]")
        if not 0.0 <= self.topic_prob <= 1.0:
            raise ValueError("topic_prob must lie in [0, 1]")
        if self.filler_vocab_size < 1:
            raise ValueError("filler_vocab_size must be >= 1")
        if self.topic_prob > 0 and self.filler_vocab_size < 2 * self.n_categories:
            raise ValueError("topic words need filler_vocab_size >= 2 * n_categories")
        src_free = _source_capacity() - self.filler_vocab_size
        if self.n_polysemous > src_free:
            raise ValueError(
                f"n_polysemous={self.n_polysemous} exceeds the {src_free} source pseudo-words left after filler")
        if self.filler_vocab_size + self.n_polysemous * self.n_senses > _target_capacity():
            raise ValueError("target pseudo-word inventory exhausted")

    # flat key=value file
    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for fl in fields(self):
                v = getattr(self, fl.name)
                if isinstance(v, (tuple, list)):
                    v = ",".join(str(x) for x in v)
                f.write(f"{fl.name}={v}\n")

    @classmethod
    def read(cls, path) -> "GeneratorSpec":
        kw = read_keyvalue(path)
        return cls.from_dict(kw, path)

    @classmethod
    def from_dict(cls, kw: dict, path=None) -> "GeneratorSpec":
        types = {fl.name: fl.default for fl in fields(cls)}
        out = {}
        for k, v in kw.items():
            if k not in types:
                raise CorpusFormatError(f"unknown generator key {k!r}", path)
            default = types[k]
            try:
                if isinstance(default, tuple):
                    out[k] = tuple(int(x) for x in str(v).split(","))
                elif isinstance(default, bool):
                    out[k] = str(v).lower() in ("1", "true", "yes")
                elif isinstance(default, int):
                    out[k] = int(v)
                elif isinstance(default, float):
                    out[k] = float(v)
                else:
                    out[k] = v
            except ValueError:
                raise CorpusFormatError(f"bad value for {k}: {v!r}", path) from None
        return cls(**out)


def read_keyvalue(path) -> dict:
    """Parse a flat ``key=value`` file; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CorpusFormatError(f"expected key=value, got {line!r}", path, lineno)
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def _source_capacity() -> int:
    # CV + CVC
    n_syl = len(_SRC_ONSETS) * len(_SRC_VOWELS)
    return n_syl * n_syl * len(_SRC_CODAS)


def _target_capacity() -> int:
    # CV CV CV; vowel-final, so disjoint from consonant-final source words
    n_syl = len(_TGT_ONSETS) * len(_TGT_VOWELS)
    return n_syl ** 3


def _source_word(idx: int) -> str:
    n_syl = len(_SRC_ONSETS) * len(_SRC_VOWELS)
    s1, rest = divmod(idx, n_syl * len(_SRC_CODAS))
    s2, coda = divmod(rest, len(_SRC_CODAS))
    syl = lambda k: _SRC_ONSETS[k // len(_SRC_VOWELS)] + _SRC_VOWELS[k % len(_SRC_VOWELS)]
    return syl(s1) + syl(s2) + _SRC_CODAS[coda]


def _target_word(idx: int) -> str:
    n_syl = len(_TGT_ONSETS) * len(_TGT_VOWELS)
    syl = lambda k: _TGT_ONSETS[k // len(_TGT_VOWELS)] + _TGT_VOWELS[k % len(_TGT_VOWELS)]
    a, rest = divmod(idx, n_syl * n_syl)
    b, c = divmod(rest, n_syl)
    return syl(a) + syl(b) + syl(c)


@dataclass
class SenseTable:
    """Correct target for every (polysemous word, category) pair."""

    senses: dict = field(default_factory=dict)  # word -> tuple of sense targets, majority first
    by_category: dict = field(default_factory=dict)  # word -> tuple(target per category)

    def target(self, word: str, category: int) -> str:
        return self.by_category[word][category]

    def majority(self, word: str) -> str:
        return self.senses[word][0]

    def write(self, path, categories: CategorySet) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for w in sorted(self.by_category):
                for cid, tgt in enumerate(self.by_category[w]):
                    f.write(f"{w}\t{categories.label_of(cid)}\t{tgt}\t{int(tgt == self.majority(w))}\n")

    @classmethod
    def read(cls, path, categories: CategorySet) -> "SenseTable":
        by_cat, maj = {}, {}
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 4:
                    raise CorpusFormatError("expected 4 fields", path, lineno)
                w, lab, tgt, is_maj = parts
                by_cat.setdefault(w, [None] * len(categories))[categories.id_of(lab)] = tgt
                if is_maj == "1":
                    maj[w] = tgt
        table = cls()
        for w, tg in by_cat.items():
            if any(t is None for t in tg):
                raise CorpusFormatError(f"word {w!r} lacks a sense for some category", path)
            others = sorted(set(tg) - {maj[w]})
            table.by_category[w] = tuple(tg)
            table.senses[w] = (maj[w], *others)
        return table


@dataclass
class SyntheticCorpus:
    train: list
    dev: list
    test: list
    categories: CategorySet
    senses: SenseTable


def generate_synthetic(spec: GeneratorSpec) -> SyntheticCorpus:
    """Generate a seeded corpus whose polysemous words are disambiguated by category.

    Every title carries exactly one polysemous source word.  Its sense is the
    majority sense with probability ``sense_skew``; the category is then drawn
    uniformly among the categories mapped to that sense, so the correct target
    is a function of (word, category) while the marginal sense distribution is
    skewed.  Filler words translate one-to-one.  Targets follow source order up
    to adjacent swaps.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    C = spec.n_categories
    if C <= len(DEFAULT_LABELS):
        labels = list(DEFAULT_LABELS[: C - 1]) + ["Other"]
    else:
        labels = [f"cat{k}" for k in range(C)]
    categories = CategorySet(labels)

    n_src = spec.filler_vocab_size + spec.n_polysemous
    src_ids = rng.choice(_source_capacity(), size=n_src, replace=False)
    n_tgt = spec.filler_vocab_size + spec.n_polysemous * spec.n_senses
    tgt_ids = rng.choice(_target_capacity(), size=n_tgt, replace=False)
    filler_src = [_source_word(int(i)) for i in src_ids[: spec.filler_vocab_size]]
    poly_src = [_source_word(int(i)) for i in src_ids[spec.filler_vocab_size:]]
    filler_tgt = [_target_word(int(i)) for i in tgt_ids[: spec.filler_vocab_size]]
    sense_tgt = [_target_word(int(i)) for i in tgt_ids[spec.filler_vocab_size:]]
    lexicon = dict(zip(filler_src, filler_tgt))

    senses = SenseTable()
    sense_cats = {}  # word -> list of category lists, one per sense
    for k, w in enumerate(poly_src):
        targets = tuple(sense_tgt[k * spec.n_senses:(k + 1) * spec.n_senses])
        perm = [int(c) for c in rng.permutation(C)]
        # one category per minority sense, the rest go to the majority sense
        minority = perm[: spec.n_senses - 1]
        groups = [sorted(perm[spec.n_senses - 1:])] + [[c] for c in minority]
        by_cat = [None] * C
        for s, cats in enumerate(groups):
            for c in cats:
                by_cat[c] = targets[s]
        senses.senses[w] = targets
        senses.by_category[w] = tuple(by_cat)
        sense_cats[w] = groups

    # Zipfian filler distribution; optional category-private topic pools
    if spec.topic_prob > 0:
        n_shared = spec.filler_vocab_size // 2
        pool_size = (spec.filler_vocab_size - n_shared) // C
        shared = filler_src[:n_shared]
        pools = [filler_src[n_shared + c * pool_size: n_shared + (c + 1) * pool_size] for c in range(C)]
    else:
        shared, pools = filler_src, None
    ranks = np.arange(1, len(shared) + 1, dtype=float)
    zipf = ranks ** -spec.zipf_exponent
    zipf /= zipf.sum()

    def make(n: int) -> list:
        out = []
        lo, hi = spec.title_len_range
        for _ in range(n):
            w = poly_src[int(rng.integers(len(poly_src)))]
            if rng.random() < spec.sense_skew:
                s = 0
            else:
                s = 1 + int(rng.integers(spec.n_senses - 1))
            cats = sense_cats[w][s]
            cat = cats[int(rng.integers(len(cats)))]
            length = int(rng.integers(lo, hi + 1))
            src = []
            for _ in range(length - 1):
                if pools is not None and rng.random() < spec.topic_prob:
                    pool = pools[cat]
                    src.append(pool[int(rng.integers(len(pool)))])
                else:
                    src.append(shared[int(rng.choice(len(shared), p=zipf))])
            src.insert(int(rng.integers(length)), w)
            tgt = [senses.by_category[t][cat] if t in senses.by_category else lexicon[t] for t in src]
            if rng.random() < spec.spec_prob:
                num = int(rng.integers(1, 1000))
                tok = str(num) if rng.random() < 0.5 else f"{num}{_UNITS[int(rng.integers(len(_UNITS)))]}"
                pos = int(rng.integers(len(src) + 1))
                src.insert(pos, tok)
                tgt.insert(pos, tok)
            i = 0
            while i < len(tgt) - 1:
                if spec.swap_prob > 0 and rng.random() < spec.swap_prob:
                    tgt[i], tgt[i + 1] = tgt[i + 1], tgt[i]
                    i += 2
                else:
                    i += 1
            if rng.random() < 0.5:
                src[0] = src[0].capitalize()
            out.append(ParallelRecord(tuple(src), tuple(tgt), cat, ()))
        return out

    train = make(spec.n_train)
    dev = make(spec.n_dev)
    test = make(spec.n_test)
    return SyntheticCorpus(train, dev, test, categories, senses)


def write_synthetic(corpus: SyntheticCorpus, outdir) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    corpus.categories.write(outdir / "categories.txt")
    corpus.senses.write(outdir / "senses.tsv", corpus.categories)
    write_corpus(corpus.train, outdir / "train.tsv", corpus.categories, "train")
    write_corpus(corpus.dev, outdir / "dev.tsv", corpus.categories, "test")
    write_corpus(corpus.test, outdir / "test.tsv", corpus.categories, "test")


def polysemy_accuracy(hyps: Sequence[Sequence[str]], records: Sequence[ParallelRecord], senses: SenseTable) -> float:
    """Fraction of polysemous source occurrences whose correct sense appears in the hypothesis."""
    total = correct = 0
    for hyp, rec in zip(hyps, records):
        hyp_set = set(hyp)
        for tok in rec.source:
            if tok in senses.by_category:
                total += 1
                correct += senses.target(tok, rec.category) in hyp_set
    return correct / total if total else float("nan")
