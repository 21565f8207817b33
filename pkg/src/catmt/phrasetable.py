"""Phrase extraction and scoring, category membership vectors and the category lexicon.

Phrase table text format, one entry per line::

    f ||| e ||| p(e|f) p(f|e) lex(e|f) lex(f|e) ||| j-i links ||| c0 c1 ... c{C-1}
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .align import AlignmentMatrix, TTable
from .corpusio import CorpusFormatError, ParallelRecord

PROB_FLOOR = 1e-9


@dataclass(frozen=True)
class PhraseEntry:
    source: tuple
    target: tuple
    align: tuple  # sorted (j, i) links relative to the phrase
    p_tgt_given_src: float
    p_src_given_tgt: float
    lex_fwd: float
    lex_bwd: float
    cat_vec: tuple
    oov: bool = False

    @property
    def scores(self) -> tuple:
        return (self.p_tgt_given_src, self.p_src_given_tgt, self.lex_fwd, self.lex_bwd)

    def to_line(self) -> str:
        sc = " ".join(repr(float(x)) for x in self.scores)
        links = " ".join(f"{j}-{i}" for j, i in self.align)
        cv = " ".join(repr(float(x)) for x in self.cat_vec)
        return f"{' '.join(self.source)} ||| {' '.join(self.target)} ||| {sc} ||| {links} ||| {cv}"

    @classmethod
    def from_line(cls, line: str) -> "PhraseEntry":
        parts = [p.strip() for p in line.split("|||")]
        if len(parts) != 5:
            raise ValueError("expected 5 '|||'-separated fields")
        sc = [float(x) for x in parts[2].split()]
        if len(sc) != 4:
            raise ValueError("expected 4 scores")
        links = tuple(tuple(int(x) for x in tok.split("-")) for tok in parts[3].split())
        cv = tuple(float(x) for x in parts[4].split())
        return cls(tuple(parts[0].split()), tuple(parts[1].split()), links, *sc, cv)


def passthrough_entry(word: str, n_categories: int) -> PhraseEntry:
    """Copy-through option for a source word the table does not cover."""
    return PhraseEntry((word,), (word,), ((0, 0),), 1.0, 1.0, 1.0, 1.0,
                       tuple([1.0 / n_categories] * n_categories), oov=True)


# ---------------------------------------------------------------------------
# extraction


def extract_spans(alignment: AlignmentMatrix, max_len: int = 7) -> list[tuple[int, int, int, int]]:
    """Consistent phrase spans ``(j1, j2, i1, i2)`` (inclusive) with unaligned boundary expansion."""
    J, I = alignment.J, alignment.I
    links = alignment.links
    tgt_aligned = [False] * I
    by_src = defaultdict(list)
    by_tgt = defaultdict(list)
    for j, i in links:
        tgt_aligned[i] = True
        by_src[j].append(i)
        by_tgt[i].append(j)
    spans = []
    for j1 in range(J):
        lo, hi = I, -1
        for j2 in range(j1, min(J, j1 + max_len)):
            for i in by_src.get(j2, ()):
                lo, hi = min(lo, i), max(hi, i)
            if hi < 0 or hi - lo + 1 > max_len:
                continue
            if any(j < j1 or j > j2 for i in range(lo, hi + 1) for j in by_tgt.get(i, ())):
                continue
            i1 = lo
            while True:
                i2 = hi
                while True:
                    if i2 - i1 + 1 <= max_len:
                        spans.append((j1, j2, i1, i2))
                    i2 += 1
                    if i2 >= I or tgt_aligned[i2] or i2 - i1 + 1 > max_len:
                        break
                i1 -= 1
                if i1 < 0 or tgt_aligned[i1] or hi - i1 + 1 > max_len:
                    break
    return spans


def extract_phrases(src: Sequence[str], tgt: Sequence[str], alignment: AlignmentMatrix,
                    max_len: int = 7) -> list[tuple[tuple, tuple, tuple]]:
    """Phrase pairs ``(source, target, relative links)`` consistent with the alignment."""
    out = []
    for j1, j2, i1, i2 in extract_spans(alignment, max_len):
        rel = tuple(sorted((j - j1, i - i1) for j, i in alignment.links if j1 <= j <= j2 and i1 <= i <= i2))
        out.append((tuple(src[j1:j2 + 1]), tuple(tgt[i1:i2 + 1]), rel))
    return out


# ---------------------------------------------------------------------------
# table


def lexical_weight(src: Sequence[str], tgt: Sequence[str], links: Iterable[tuple[int, int]], table: TTable) -> float:
    """Average-over-links lexical weight lex(tgt | src, links) under t(e|f)."""
    per_tgt = defaultdict(list)
    for j, i in links:
        per_tgt[i].append(j)
    w = 1.0
    for i, e in enumerate(tgt):
        js = per_tgt.get(i)
        if js:
            w *= sum(table.prob(e, src[j]) for j in js) / len(js)
        else:
            w *= table.prob(e, None)
    return w


class PhraseTable:
    def __init__(self, entries: Iterable[PhraseEntry], n_categories: int):
        self.n_categories = n_categories
        self.by_source = defaultdict(list)
        for e in entries:
            self.by_source[e.source].append(e)
        for opts in self.by_source.values():
            opts.sort(key=lambda e: (-e.p_tgt_given_src, e.target))
        self.max_source_len = max((len(s) for s in self.by_source), default=1)

    def __len__(self):
        return sum(len(v) for v in self.by_source.values())

    def __iter__(self):
        for src in sorted(self.by_source):
            yield from self.by_source[src]

    def options(self, source: tuple, limit: int | None = None) -> list:
        opts = self.by_source.get(source, [])
        return opts[:limit] if limit else opts

    def known_words(self) -> set:
        return {s[0] for s in self.by_source if len(s) == 1}

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(f"# categories={self.n_categories}\n")
            for e in self:
                f.write(e.to_line() + "\n")

    @classmethod
    def read(cls, path) -> "PhraseTable":
        entries = []
        C = None
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if line.startswith("# categories="):
                    C = int(line.split("=", 1)[1])
                    continue
                if not line:
                    continue
                try:
                    entries.append(PhraseEntry.from_line(line))
                except ValueError as e:
                    raise CorpusFormatError(str(e), path, lineno) from None
        if C is None:
            C = len(entries[0].cat_vec) if entries else 2
        return cls(entries, C)


def build_phrase_table(instances: Iterable[tuple[tuple, tuple, tuple, int]], n_categories: int,
                       fwd: TTable, bwd: TTable) -> PhraseTable:
    """Score phrase instances ``(source, target, links, parent category)``.

    ``fwd`` is t(e|f), ``bwd`` is t(f|e).  Lexical weights take the maximum
    over the link sets a pair was observed with; the stored links are the most
    frequent set (lexicographically smallest on ties).
    """
    pair_count = Counter()
    src_count = Counter()
    tgt_count = Counter()
    cat_count = defaultdict(Counter)
    align_count = defaultdict(Counter)
    for src, tgt, links, cat in instances:
        key = (src, tgt)
        pair_count[key] += 1
        src_count[src] += 1
        tgt_count[tgt] += 1
        cat_count[key][cat] += 1
        align_count[key][links] += 1
    entries = []
    for key in sorted(pair_count):
        src, tgt = key
        n = pair_count[key]
        aligns = align_count[key]
        best = min(aligns, key=lambda a: (-aligns[a], a))
        lex_f = max(lexical_weight(src, tgt, a, fwd) for a in aligns)
        lex_b = max(lexical_weight(tgt, src, [(i, j) for j, i in a], bwd) for a in aligns)
        cats = cat_count[key]
        cv = tuple(cats.get(c, 0) / n for c in range(n_categories))
        entries.append(PhraseEntry(src, tgt, best, n / src_count[src], n / tgt_count[tgt],
                                   min(lex_f, 1.0), min(lex_b, 1.0), cv))
    return PhraseTable(entries, n_categories)


def phrase_instances(records: Sequence[ParallelRecord], alignments: Sequence[AlignmentMatrix], max_len: int = 7):
    for rec, a in zip(records, alignments):
        for src, tgt, links in extract_phrases(rec.source, rec.target, a, max_len):
            yield src, tgt, links, rec.category


# ---------------------------------------------------------------------------
# sparse feature inventory


@dataclass
class SparseInventory:
    """Word pairs seen on training links, alone and conjoined with the parent category."""

    pairs: frozenset
    cat_pairs: frozenset

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for f_, e in sorted(self.pairs):
                f.write(f"wp\t{f_}\t{e}\n")
            for c, f_, e in sorted(self.cat_pairs):
                f.write(f"cwp\t{c}\t{f_}\t{e}\n")

    @classmethod
    def read(cls, path) -> "SparseInventory":
        pairs, cat_pairs = set(), set()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.rstrip("\n").split("\t")
                if parts[0] == "wp" and len(parts) == 3:
                    pairs.add((parts[1], parts[2]))
                elif parts[0] == "cwp" and len(parts) == 4:
                    cat_pairs.add((int(parts[1]), parts[2], parts[3]))
                else:
                    raise CorpusFormatError("bad sparse inventory line", path, lineno)
        return cls(frozenset(pairs), frozenset(cat_pairs))


def build_sparse_inventory(records: Sequence[ParallelRecord], alignments: Sequence[AlignmentMatrix]) -> SparseInventory:
    pairs, cat_pairs = set(), set()
    for rec, a in zip(records, alignments):
        for j, i in a.links:
            f, e = rec.source[j], rec.target[i]
            pairs.add((f, e))
            cat_pairs.add((rec.category, f, e))
    return SparseInventory(frozenset(pairs), frozenset(cat_pairs))


# ---------------------------------------------------------------------------
# generative category lexicon p(category | target word)


class CategoryLexicon:
    def __init__(self, counts: dict, n_categories: int, alpha: float = 0.1):
        if alpha < 0:
            raise ValueError("alpha must be >= 0")
        self.counts = counts  # word -> np.ndarray of per-category counts
        self.n_categories = n_categories
        self.alpha = alpha
        self._cache = {}

    def prob_vector(self, word: str) -> np.ndarray:
        v = self._cache.get(word)
        if v is not None:
            return v
        c = self.counts.get(word)
        if c is None:
            v = np.full(self.n_categories, 1.0 / self.n_categories)
        else:
            v = (c + self.alpha) / (c.sum() + self.alpha * self.n_categories)
        self._cache[word] = v
        return v

    def prob(self, category: int, word: str) -> float:
        return float(self.prob_vector(word)[category])

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(f"catlex {self.n_categories} {self.alpha!r}\n")
            for w in sorted(self.counts):
                f.write(w + " " + " ".join(repr(float(x)) for x in self.counts[w]) + "\n")

    @classmethod
    def read(cls, path) -> "CategoryLexicon":
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
        head = lines[0].split() if lines else []
        if len(head) != 3 or head[0] != "catlex":
            raise CorpusFormatError("expected header 'catlex C alpha'", path, 1)
        C, alpha = int(head[1]), float(head[2])
        counts = {}
        for k, line in enumerate(lines[1:], 2):
            parts = line.split()
            if len(parts) != C + 1:
                raise CorpusFormatError(f"expected word and {C} counts", path, k)
            counts[parts[0]] = np.array([float(x) for x in parts[1:]])
        return cls(counts, C, alpha)


def train_category_lexicon(corpus: Iterable[tuple[Sequence[str], int]], n_categories: int,
                           alpha: float = 0.1) -> CategoryLexicon:
    """Estimate p(category | e) = (n(e, cat) + alpha) / (n(e) + alpha * C) from (target tokens, category) pairs."""
    counts = {}
    for toks, cat in corpus:
        for e in toks:
            v = counts.get(e)
            if v is None:
                v = counts[e] = np.zeros(n_categories)
            v[cat] += 1
    return CategoryLexicon(counts, n_categories, alpha)


def category_lexicon_score(lexicon: CategoryLexicon, target: Sequence[str], category: int) -> float:
    """Sum of log p(category | e) over target words, each probability floored at 1e-9."""
    return sum(math.log(max(lexicon.prob(category, e), PROB_FLOOR)) for e in target)
