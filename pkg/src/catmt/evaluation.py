"""Corpus BLEU, TER with greedy block shifts, WER and approximate-randomization testing.

Per-sentence sufficient statistics are plain numpy rows so corpora, shuffles
and MERT intervals all reduce to vector sums:

* BLEU rows hold ``[m1..m4, t1..t4, hyp_len, ref_len]``.
* TER / WER rows hold ``[edits, ref_len]``.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)

MAX_N = 4
BLEU_DIM = 2 * MAX_N + 2


def _norm(tokens, case_insensitive: bool) -> tuple:
    if isinstance(tokens, str):
        tokens = tokens.split()
    return tuple(t.lower() for t in tokens) if case_insensitive else tuple(tokens)


def _ngrams(tokens: tuple, n: int) -> Counter:
    return Counter(tokens[i:i + n] for i in range(len(tokens) - n + 1))


# ---------------------------------------------------------------------------
# BLEU


def bleu_stats(hyp, refs, case_insensitive: bool = True) -> np.ndarray:
    """Clipped n-gram matches / totals, hypothesis length, closest reference length."""
    h = _norm(hyp, case_insensitive)
    rs = [_norm(r, case_insensitive) for r in refs]
    if not rs:
        raise ValueError("at least one reference required")
    row = np.zeros(BLEU_DIM)
    for n in range(1, MAX_N + 1):
        hc = _ngrams(h, n)
        maxref = Counter()
        for r in rs:
            for g, c in _ngrams(r, n).items():
                if c > maxref[g]:
                    maxref[g] = c
        row[n - 1] = sum(min(c, maxref[g]) for g, c in hc.items())
        row[MAX_N + n - 1] = max(len(h) - n + 1, 0)
    row[2 * MAX_N] = len(h)
    # closest reference length, shorter on ties
    row[2 * MAX_N + 1] = min((abs(len(r) - len(h)), len(r)) for r in rs)[1]
    return row


def corpus_bleu_stats(hyps, ref_sets, case_insensitive: bool = True) -> np.ndarray:
    if len(hyps) != len(ref_sets):
        raise ValueError(f"{len(hyps)} hypotheses but {len(ref_sets)} reference sets")
    if not len(hyps):
        raise ValueError("empty corpus")
    return np.array([bleu_stats(h, r, case_insensitive) for h, r in zip(hyps, ref_sets)])


def bleu_from_stats(stats: np.ndarray) -> np.ndarray:
    """Corpus BLEU (0-100) for summed statistics; works on a (..., BLEU_DIM) array.

    A zero-count order (no n-grams of that length in the hypotheses) gives 0.
    """
    stats = np.asarray(stats, dtype=float)
    m, t = stats[..., :MAX_N], stats[..., MAX_N:2 * MAX_N]
    c, r = stats[..., 2 * MAX_N], stats[..., 2 * MAX_N + 1]
    ok = np.all(m > 0, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.where(ok[..., None], np.log(np.where(m > 0, m, 1.0)) - np.log(np.where(t > 0, t, 1.0)), 0.0)
        logbp = np.where(c < r, 1.0 - r / np.where(c > 0, c, 1.0), 0.0)
    return np.where(ok & (c > 0), 100.0 * np.exp(logp.mean(axis=-1) + logbp), 0.0)


@dataclass
class BleuResult:
    score: float
    precisions: list
    bp: float
    hyp_len: int
    ref_len: int

    def __str__(self):
        prec = "/".join(f"{100 * p:.1f}" for p in self.precisions)
        return (f"BLEU = {self.score:.2f}, {prec} (BP={self.bp:.3f}, "
                f"hyp_len={self.hyp_len}, ref_len={self.ref_len})")


def bleu_result(stats: np.ndarray) -> BleuResult:
    s = np.asarray(stats, dtype=float)
    if s.ndim == 2:
        s = s.sum(axis=0)
    m, t = s[:MAX_N], s[MAX_N:2 * MAX_N]
    c, r = s[2 * MAX_N], s[2 * MAX_N + 1]
    if np.any(t == 0):
        log.warning("BLEU: no %d-grams in the hypotheses; corpus BLEU is 0", int(np.argmax(t == 0)) + 1)
    prec = [float(mi / ti) if ti > 0 else 0.0 for mi, ti in zip(m, t)]
    bp = 1.0 if c >= r else (math.exp(1.0 - r / c) if c > 0 else 0.0)
    return BleuResult(float(bleu_from_stats(s)), prec, bp, int(c), int(r))


def bleu(hyps, ref_sets, case_insensitive: bool = True) -> BleuResult:
    return bleu_result(corpus_bleu_stats(hyps, ref_sets, case_insensitive))


def sentence_bleu_plus1(stats: np.ndarray) -> np.ndarray:
    """Sentence-level BLEU+1 in [0, 1]: add-one smoothing on orders 2..4; works row-wise."""
    stats = np.asarray(stats, dtype=float)
    m = stats[..., :MAX_N].copy()
    t = stats[..., MAX_N:2 * MAX_N].copy()
    m[..., 1:] += 1.0
    t[..., 1:] += 1.0
    c, r = stats[..., 2 * MAX_N], stats[..., 2 * MAX_N + 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.log(np.where(m > 0, m, 1.0)) - np.log(np.where(t > 0, t, 1.0))
        logbp = np.where(c < r, 1.0 - r / np.where(c > 0, c, 1.0), 0.0)
    ok = (m[..., 0] > 0) & (c > 0)
    return np.where(ok, np.exp(logp.mean(axis=-1) + logbp), 0.0)


# ---------------------------------------------------------------------------
# edit distances


def levenshtein(a: Sequence, b: Sequence) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def _best_shift(hyp: list, ref: tuple, current: int, max_block: int):
    """Shift giving the largest edit reduction; ties: smallest block, leftmost start, leftmost target.

    Only blocks that occur somewhere in the reference are tried.
    """
    ref_grams = {tuple(ref[i:i + L]) for L in range(1, min(max_block, len(ref)) + 1)
                 for i in range(len(ref) - L + 1)}
    best = None  # (gain, -L, -start, -dest, new_hyp)
    n = len(hyp)
    for L in range(1, min(max_block, n) + 1):
        for i in range(n - L + 1):
            block = hyp[i:i + L]
            if tuple(block) not in ref_grams:
                continue
            rest = hyp[:i] + hyp[i + L:]
            for p in range(len(rest) + 1):
                if p == i:
                    continue
                cand = rest[:p] + block + rest[p:]
                gain = current - levenshtein(cand, ref)
                if gain <= 0:
                    continue
                key = (gain, -L, -i, -p)
                if best is None or key > best[0]:
                    best = (key, cand)
    return best


def ter_edits(hyp, ref, case_insensitive: bool = True, max_block: int = 10) -> int:
    """Shifts plus final Levenshtein edits against a single reference."""
    h = list(_norm(hyp, case_insensitive))
    r = _norm(ref, case_insensitive)
    shifts = 0
    current = levenshtein(h, r)
    while current > 0:
        best = _best_shift(h, r, current, max_block)
        if best is None:
            break
        h = best[1]
        current -= best[0][0]
        shifts += 1
    return shifts + current


def _best_ref(values_and_lengths):
    return min(values_and_lengths, key=lambda x: (x[0] / x[1], x[1]))


def ter_stats(hyp, refs, case_insensitive: bool = True) -> np.ndarray:
    if not refs:
        raise ValueError("at least one reference required")
    rows = []
    for r in refs:
        rl = len(_norm(r, case_insensitive))
        if rl == 0:
            raise ValueError("empty reference")
        rows.append((ter_edits(hyp, r, case_insensitive), rl))
    return np.array(_best_ref(rows), dtype=float)


def wer_stats(hyp, refs, case_insensitive: bool = True) -> np.ndarray:
    if not refs:
        raise ValueError("at least one reference required")
    h = _norm(hyp, case_insensitive)
    rows = []
    for r in refs:
        rn = _norm(r, case_insensitive)
        if not rn:
            raise ValueError("empty reference")
        rows.append((levenshtein(h, rn), len(rn)))
    return np.array(_best_ref(rows), dtype=float)


def ter(hyp, refs, case_insensitive: bool = True) -> float:
    e, rl = ter_stats(hyp, refs, case_insensitive)
    return float(e / rl)


def wer(hyp, refs, case_insensitive: bool = True) -> float:
    e, rl = wer_stats(hyp, refs, case_insensitive)
    return float(e / rl)


def rate_from_stats(stats: np.ndarray) -> np.ndarray:
    """Corpus TER/WER (0-100) from summed [edits, ref_len] rows."""
    stats = np.asarray(stats, dtype=float)
    return 100.0 * stats[..., 0] / stats[..., 1]


def corpus_ter_stats(hyps, ref_sets, case_insensitive: bool = True) -> np.ndarray:
    if len(hyps) != len(ref_sets):
        raise ValueError(f"{len(hyps)} hypotheses but {len(ref_sets)} reference sets")
    return np.array([ter_stats(h, r, case_insensitive) for h, r in zip(hyps, ref_sets)])


# ---------------------------------------------------------------------------
# significance


METRICS: dict[str, tuple[Callable, Callable, bool]] = {
    # name: (per-corpus stats builder, stats -> score, higher is better)
    "bleu": (corpus_bleu_stats, bleu_from_stats, True),
    "ter": (corpus_ter_stats, rate_from_stats, False),
}


def approx_randomization_stats(stats_a: np.ndarray, stats_b: np.ndarray, score: Callable,
                               R: int = 10000, seed: int = 1, chunk: int = 1000) -> float:
    """p-value of the observed |score(A) - score(B)| under random per-sentence swaps."""
    stats_a = np.asarray(stats_a, dtype=float)
    stats_b = np.asarray(stats_b, dtype=float)
    if stats_a.shape != stats_b.shape:
        raise ValueError("systems must cover the same sentences")
    observed = abs(float(score(stats_a.sum(0))) - float(score(stats_b.sum(0))))
    rng = np.random.default_rng(seed)
    diff = stats_b - stats_a
    sum_a, sum_b = stats_a.sum(0), stats_b.sum(0)
    hits = 0
    done = 0
    while done < R:
        k = min(chunk, R - done)
        swap = rng.random((k, len(stats_a))) < 0.5
        moved = swap.astype(float) @ diff
        pa = sum_a + moved
        pb = sum_b - moved
        d = np.abs(score(pa) - score(pb))
        # small tolerance so exact ties (e.g. identical systems) count as extreme
        hits += int(np.count_nonzero(d >= observed - 1e-9))
        done += k
    return (hits + 1) / (R + 1)


def approx_randomization(hyps_a, hyps_b, ref_sets, metric: str = "bleu", R: int = 10000, seed: int = 1,
                         case_insensitive: bool = True) -> float:
    build, score, _ = METRICS[metric]
    if len(hyps_a) != len(hyps_b):
        raise ValueError("systems must have the same number of sentences")
    return approx_randomization_stats(build(hyps_a, ref_sets, case_insensitive),
                                      build(hyps_b, ref_sets, case_insensitive), score, R, seed)


def stars(p: float) -> str:
    return "**" if p < 0.01 else "*" if p < 0.05 else ""


# ---------------------------------------------------------------------------
# report


def score_report(hyps, ref_sets, baseline=None, R: int = 10000, seed: int = 1,
                 case_insensitive: bool = True) -> str:
    bstats = corpus_bleu_stats(hyps, ref_sets, case_insensitive)
    tstats = corpus_ter_stats(hyps, ref_sets, case_insensitive)
    res = bleu_result(bstats)
    lines = [
        f"BLEU\t{res.score:.2f}",
        "precisions\t" + " ".join(f"{100 * p:.2f}" for p in res.precisions),
        f"BP\t{res.bp:.4f}",
        f"hyp_len\t{res.hyp_len}",
        f"ref_len\t{res.ref_len}",
        f"TER\t{float(rate_from_stats(tstats.sum(0))):.2f}",
    ]
    if baseline is not None:
        base_stats = corpus_bleu_stats(baseline, ref_sets, case_insensitive)
        p = approx_randomization_stats(bstats, base_stats, bleu_from_stats, R, seed)
        lines.append(f"baseline_BLEU\t{float(bleu_from_stats(base_stats.sum(0))):.2f}")
        lines.append(f"p_value\t{p:.4f}")
    return "\n".join(lines) + "\n"
