"""Interpolated modified Kneser-Ney n-gram language model with ARPA I/O.

Probabilities are kept in natural log internally and written as log10 in
ARPA files.  Every observed n-gram stores its fully interpolated probability
and every observed context stores its interpolation weight as a backoff, so
lookup is the usual ARPA backoff walk.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from typing import Iterable, Sequence

from .corpusio import BOS, EOS, UNK, CorpusFormatError

LN10 = math.log(10.0)
# log10 probability ARPA files conventionally give <s>
BOS_LOG10 = -99.0
FALLBACK_DISCOUNT = 0.75


class NgramModel:
    """Backoff tables: ``probs[k]`` maps k-gram tuples to ln p, ``backoffs[k]`` maps k-gram contexts to ln weight."""

    def __init__(self, order: int, probs: list, backoffs: list, fallback: Sequence[bool] | None = None):
        self.order = order
        # index 0 unused so that probs[k] holds k-grams
        self.probs = probs
        self.backoffs = backoffs
        self.fallback = list(fallback) if fallback is not None else [False] * order
        self.vocab = {g[0] for g in probs[1]}
        if UNK not in self.vocab:
            raise ValueError("model lacks <unk>")

    def map_word(self, w: str) -> str:
        return w if w in self.vocab else UNK

    def logprob(self, history: Sequence[str], word: str) -> float:
        """ln p(word | history); the history is truncated and OOV-mapped here."""
        word = self.map_word(word)
        n = self.order
        ctx = tuple(self.map_word(w) for w in history[len(history) - (n - 1):]) if n > 1 else ()
        return self._lookup(ctx, word)

    def _lookup(self, ctx: tuple, word: str) -> float:
        bo = 0.0
        probs, backoffs = self.probs, self.backoffs
        for k in range(len(ctx), -1, -1):
            h = ctx[len(ctx) - k:]
            p = probs[k + 1].get(h + (word,))
            if p is not None:
                return bo + p
            if k:
                bo += backoffs[k].get(h, 0.0)
        raise KeyError(word)  # unreachable: every vocabulary word has a unigram

    def score_sentence(self, tokens: Sequence[str], bos: bool = True, eos: bool = True) -> float:
        hist = [BOS] if bos else []
        total = 0.0
        for w in list(tokens) + ([EOS] if eos else []):
            total += self.logprob(hist, w)
            hist.append(w)
        return total

    def predictable(self) -> list:
        """Words with a probability: the vocabulary minus <s>."""
        return sorted(w for w in self.vocab if w != BOS)


# ---------------------------------------------------------------------------
# training


def _discounts(adjusted: dict) -> tuple[tuple[float, float, float], bool]:
    coc = Counter()
    for c in adjusted.values():
        if c <= 4:
            coc[c] += 1
    n1, n2, n3, n4 = (coc[k] for k in (1, 2, 3, 4))
    if min(n1, n2, n3, n4) == 0:
        return (FALLBACK_DISCOUNT,) * 3, True
    y = n1 / (n1 + 2 * n2)
    d1 = 1 - 2 * y * n2 / n1
    d2 = 2 - 3 * y * n3 / n2
    d3 = 3 - 4 * y * n4 / n3
    if not (0 < d1 <= 1 and 0 < d2 <= 2 and 0 < d3 <= 3):
        return (FALLBACK_DISCOUNT,) * 3, True
    return (d1, d2, d3), False


def train_kn(corpus: Iterable[Sequence[str]], order: int = 3, min_count: int = 2,
             force_fallback: bool = False) -> NgramModel:
    """Train an interpolated modified Kneser-Ney model.

    Highest-order n-grams use raw counts; lower orders use continuation counts
    (distinct left extensions) except for n-grams starting with <s>, which keep
    raw counts.  The unigram level interpolates with the uniform distribution
    over the predictable vocabulary.  Orders whose count-of-counts cannot
    support the Chen-Goodman estimates fall back to a fixed 0.75 discount.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    sents = [list(s) for s in corpus]
    if not sents:
        raise ValueError("empty corpus")
    wc = Counter(w for s in sents for w in s)
    keep = {w for w, c in wc.items() if c >= min_count and w not in (BOS, EOS, UNK)}
    vocab = keep | {UNK, EOS, BOS}

    raw = [None] + [Counter() for _ in range(order)]
    for s in sents:
        toks = [BOS] + [w if w in keep else UNK for w in s] + [EOS]
        for k in range(1, order + 1):
            for p in range(len(toks) - k + 1):
                raw[k][tuple(toks[p:p + k])] += 1

    adjusted = [None] * (order + 1)
    adjusted[order] = dict(raw[order])
    for k in range(order - 1, 0, -1):
        ext = Counter()
        for g in raw[k + 1]:
            ext[g[1:]] += 1
        adj = {}
        for g, c in raw[k].items():
            adj[g] = c if g[0] == BOS else ext.get(g, 0)
        adjusted[k] = {g: c for g, c in adj.items() if c > 0}
    # <s> is never predicted
    adjusted[1].pop((BOS,), None)

    fallback = []
    discounts = [None]
    for k in range(1, order + 1):
        d, fb = _discounts(adjusted[k]) if not force_fallback else ((FALLBACK_DISCOUNT,) * 3, True)
        discounts.append(d)
        fallback.append(fb)

    def disc(k, c):
        d = discounts[k]
        return d[0] if c == 1 else d[1] if c == 2 else d[2]

    probs = [None] + [dict() for _ in range(order)]
    backoffs = [None] + [dict() for _ in range(order)]

    # unigrams
    predictable = sorted(vocab - {BOS})
    total = sum(adjusted[1].values())
    gamma0_num = 0.0
    for g, c in adjusted[1].items():
        gamma0_num += disc(1, c)
    uniform = 1.0 / len(predictable)
    gamma0 = gamma0_num / total
    for w in predictable:
        c = adjusted[1].get((w,), 0)
        p = (max(c - disc(1, c), 0.0) / total if c else 0.0) + gamma0 * uniform
        probs[1][(w,)] = math.log(p)
    probs[1][(BOS,)] = BOS_LOG10 * LN10

    for k in range(2, order + 1):
        by_ctx = defaultdict(list)
        for g, c in adjusted[k].items():
            by_ctx[g[:-1]].append((g[-1], c))
        lower_model = NgramModel(k - 1, probs[:k], backoffs[:k], fallback[:k - 1])
        for h, items in by_ctx.items():
            denom = sum(c for _, c in items)
            gamma = sum(disc(k, c) for _, c in items) / denom
            for w, c in items:
                lower = lower_model._lookup(h[1:], w)
                p = (c - disc(k, c)) / denom + gamma * math.exp(lower)
                probs[k][h + (w,)] = math.log(p)
            backoffs[k - 1][h] = math.log(gamma)
    return NgramModel(order, probs, backoffs, fallback)


def lm_logprob(model: NgramModel, history: Sequence[str], word: str) -> float:
    return model.logprob(history, word)


def perplexity(model: NgramModel, corpus: Iterable[Sequence[str]]) -> float:
    """exp of the mean negative log probability; </s> counts as a token."""
    total, n = 0.0, 0
    for s in corpus:
        total += model.score_sentence(s)
        n += len(s) + 1
    return math.exp(-total / n)


# ---------------------------------------------------------------------------
# ARPA


def _fmt(x: float) -> str:
    return repr(x)


def write_arpa(model: NgramModel, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        flags = ",".join(str(int(b)) for b in model.fallback)
        f.write(f"# modified Kneser-Ney order={model.order} fixed_discount_fallback={flags}\n\n")
        f.write("\\data\\\n")
        for k in range(1, model.order + 1):
            f.write(f"ngram {k}={len(model.probs[k])}\n")
        for k in range(1, model.order + 1):
            f.write(f"\n\\{k}-grams:\n")
            bo = model.backoffs[k] if k < model.order else {}
            for g in sorted(model.probs[k]):
                p = model.probs[k][g] / LN10
                line = f"{_fmt(p)}\t{' '.join(g)}"
                if g in bo:
                    line += f"\t{_fmt(bo[g] / LN10)}"
                f.write(line + "\n")
        f.write("\n\\end\\\n")


def read_arpa(path) -> NgramModel:
    with open(path, encoding="utf-8") as f:
        lines = f.read().split("\n")
    fallback = None
    k = 0
    while k < len(lines) and lines[k].strip() != "\\data\\":
        line = lines[k]
        if "fixed_discount_fallback=" in line:
            fallback = [s == "1" for s in line.split("fixed_discount_fallback=")[1].split(",")]
        k += 1
    if k == len(lines):
        raise CorpusFormatError("missing \\data\\ header", path)
    k += 1
    counts = {}
    while k < len(lines) and lines[k].startswith("ngram "):
        try:
            n, c = lines[k][6:].split("=")
            counts[int(n)] = int(c)
        except ValueError:
            raise CorpusFormatError(f"bad count line {lines[k]!r}", path, k + 1) from None
        k += 1
    if not counts:
        raise CorpusFormatError("no ngram count lines", path, k + 1)
    order = max(counts)
    probs = [None] + [dict() for _ in range(order)]
    backoffs = [None] + [dict() for _ in range(order)]
    current = None
    saw_end = False
    for k in range(k, len(lines)):
        line = lines[k].strip()
        if not line:
            continue
        if line == "\\end\\":
            saw_end = True
            break
        if line.startswith("\\"):
            if not line.endswith("-grams:"):
                raise CorpusFormatError(f"bad section header {line!r}", path, k + 1)
            try:
                current = int(line[1:-len("-grams:")])
            except ValueError:
                raise CorpusFormatError(f"bad section header {line!r}", path, k + 1) from None
            if current not in counts:
                raise CorpusFormatError(f"section {current} not declared in \\data\\", path, k + 1)
            continue
        if current is None:
            raise CorpusFormatError("n-gram entry outside a section", path, k + 1)
        parts = lines[k].rstrip().split("\t")
        if len(parts) == 1:
            parts = line.split()
            p, words = parts[0], parts[1:current + 1]
            bo = parts[current + 1] if len(parts) > current + 1 else None
        else:
            p, words = parts[0], parts[1].split()
            bo = parts[2] if len(parts) > 2 else None
        if len(words) != current:
            raise CorpusFormatError(f"expected a {current}-gram", path, k + 1)
        g = tuple(words)
        probs[current][g] = float(p) * LN10
        if bo is not None:
            backoffs[current][g] = float(bo) * LN10
    if not saw_end:
        raise CorpusFormatError("missing \\end\\ marker", path)
    for n, c in counts.items():
        if len(probs[n]) != c:
            raise CorpusFormatError(f"header declares {c} {n}-grams, found {len(probs[n])}", path)
    return NgramModel(order, probs, backoffs, fallback)
