"""Log-linear weight optimization on n-best lists: MERT with exact line search and batch MIRA."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .decoder.model import is_sparse
from .evaluation import BLEU_DIM, MAX_N, bleu_from_stats, bleu_stats, sentence_bleu_plus1

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# pool


class NBestPool:
    """Unique (by surface string) derivations per dev sentence, accumulated across iterations."""

    def __init__(self, ref_sets: Sequence[Sequence]):
        self.ref_sets = [list(r) for r in ref_sets]
        self.entries = [dict() for _ in ref_sets]  # tokens -> (features, bleu stats)
        self._cache = None

    def __len__(self):
        return sum(len(e) for e in self.entries)

    @property
    def n_sentences(self) -> int:
        return len(self.entries)

    def add(self, sent_id: int, derivations) -> int:
        """Merge derivations; returns how many were new."""
        added = 0
        bucket = self.entries[sent_id]
        for d in derivations:
            tokens = tuple(d.tokens)
            if tokens in bucket:
                continue
            bucket[tokens] = (dict(d.features), bleu_stats(tokens, self.ref_sets[sent_id]))
            added += 1
        if added:
            self._cache = None
        return added

    def feature_names(self) -> list:
        names = set()
        for bucket in self.entries:
            for feats, _ in bucket.values():
                names.update(feats)
        return sorted(names, key=lambda n: (is_sparse(n), n))

    def matrices(self, names: Sequence[str]):
        """Per sentence: (local column ids, feature matrix (k, d_local), BLEU stats (k, BLEU_DIM))."""
        key = tuple(names)
        if self._cache is not None and self._cache[0] == key:
            return self._cache[1]
        index = {n: k for k, n in enumerate(names)}
        out = []
        for bucket in self.entries:
            if not bucket:
                out.append((np.zeros(0, dtype=np.int64), np.zeros((0, 0)), np.zeros((0, BLEU_DIM))))
                continue
            local = sorted({index[n] for feats, _ in bucket.values() for n in feats if n in index})
            pos = {c: k for k, c in enumerate(local)}
            F = np.zeros((len(bucket), len(local)))
            S = np.zeros((len(bucket), BLEU_DIM))
            for r, (feats, stats) in enumerate(bucket.values()):
                for n, v in feats.items():
                    c = index.get(n)
                    if c is not None:
                        F[r, pos[c]] = v
                S[r] = stats
            out.append((np.array(local, dtype=np.int64), F, S))
        self._cache = (key, out)
        return out


def _as_vector(weights: dict, names: Sequence[str]) -> np.ndarray:
    return np.array([weights.get(n, 0.0) for n in names])


def _as_dict(vec: np.ndarray, names: Sequence[str], base: dict | None = None) -> dict:
    out = dict(base or {})
    for n, v in zip(names, vec):
        out[n] = float(v)
    return out


def pool_bleu(mats, w: np.ndarray) -> float:
    """Corpus BLEU of the model-best derivation per sentence (first index wins ties)."""
    total = np.zeros(BLEU_DIM)
    for cols, F, S in mats:
        if len(S):
            total += S[int(np.argmax(F @ w[cols]))]
    return float(bleu_from_stats(total))


# ---------------------------------------------------------------------------
# MERT


def upper_envelope(a: np.ndarray, b: np.ndarray):
    """Upper envelope of lines a + b*g.

    Returns (line indices, start points): line ``idx[k]`` is the argmax on
    ``[starts[k], starts[k+1])`` with ``starts[0] = -inf``.  Among identical
    lines the lowest index is kept.
    """
    order = np.lexsort((np.arange(len(a)), -a, b))  # slope asc, intercept desc, index asc
    hull, starts = [], []
    last_b = None
    for k in order:
        if last_b is not None and b[k] == last_b:
            continue  # same slope, lower (or equal, later) intercept: never on top
        last_b = b[k]
        while hull:
            j = hull[-1]
            x = (a[j] - a[k]) / (b[k] - b[j])
            if x <= starts[-1]:
                hull.pop()
                starts.pop()
            else:
                break
        starts.append(-math.inf if not hull else (a[hull[-1]] - a[k]) / (b[k] - b[hull[-1]]))
        hull.append(k)
    return np.array(hull, dtype=np.int64), np.array(starts)


def line_search(mats, w: np.ndarray, d: np.ndarray):
    """Exact BLEU-optimal step along ``d``; returns (gamma, BLEU at gamma)."""
    total = np.zeros(BLEU_DIM)
    events = []  # (breakpoint, stats delta)
    for cols, F, S in mats:
        if not len(S):
            continue
        a = F @ w[cols]
        b = F @ d[cols]
        idx, starts = upper_envelope(a, b)
        total += S[idx[0]]
        for k in range(1, len(idx)):
            events.append((starts[k], S[idx[k]] - S[idx[k - 1]]))
    if not events:
        return 0.0, float(bleu_from_stats(total))
    events.sort(key=lambda e: e[0])
    xs = np.array([e[0] for e in events])
    deltas = np.array([e[1] for e in events])
    # interval k covers [xs[k-1], xs[k]); interval 0 is (-inf, xs[0])
    cum = total + np.concatenate([np.zeros((1, BLEU_DIM)), np.cumsum(deltas, axis=0)])
    scores = bleu_from_stats(cum)
    # merge coincident breakpoints: only the stats after the last event at a point are reachable
    valid = np.ones(len(cum), dtype=bool)
    valid[1:-1] = xs[1:] > xs[:-1]
    scores = np.where(valid, scores, -np.inf)
    best = int(np.argmax(scores))
    if best == 0:
        gamma = xs[0] - 1.0
    elif best == len(xs):
        gamma = xs[-1] + 1.0
    else:
        gamma = 0.5 * (xs[best - 1] + xs[best])
    return float(gamma), float(scores[best])


@dataclass
class MertResult:
    weights: dict
    trace: list  # pool BLEU after each accepted step (first entry: start)


def mert(pool: NBestPool, weights: dict, names: Sequence[str] | None = None, n_random: int = 10,
         restarts: int = 0, max_rounds: int = 50, min_gain: float = 1e-5, seed: int = 1) -> MertResult:
    """Powell-style MERT: each round runs exact line searches along every coordinate plus
    ``n_random`` random directions and takes the best step if it gains at least ``min_gain``."""
    names = list(names) if names is not None else [n for n in pool.feature_names() if not is_sparse(n)]
    mats = pool.matrices(names)
    rng = np.random.default_rng(seed)
    D = len(names)

    def optimize(w0):
        w = w0.copy()
        cur = pool_bleu(mats, w)
        trace = [cur]
        for _ in range(max_rounds):
            dirs = [np.eye(D)[k] for k in range(D)]
            for _ in range(n_random):
                v = rng.normal(size=D)
                dirs.append(v / np.linalg.norm(v))
            best = (cur, None)
            for d in dirs:
                g, s = line_search(mats, w, d)
                if s > best[0]:
                    best = (s, w + g * d)
            if best[1] is None or best[0] - cur < min_gain:
                break
            w_new = best[1]
            new = pool_bleu(mats, w_new)
            if new <= cur:  # guard: the interval score must be realized at the chosen point
                break
            w, cur = w_new, new
            trace.append(cur)
        return w, trace

    w, trace = optimize(_as_vector(weights, names))
    for _ in range(restarts):
        w2, t2 = optimize(rng.normal(size=D))
        if t2[-1] > trace[-1]:
            w, trace = w2, trace + [t2[-1]]
    norm = np.abs(w).sum()
    if norm > 0:
        w = w / norm
    return MertResult(_as_dict(w, names, weights), trace)


# ---------------------------------------------------------------------------
# k-best batch MIRA


@dataclass
class MiraResult:
    weights: dict
    trace: list  # pool BLEU of the averaged weights after each epoch


def kbmira(pool: NBestPool, weights: dict, names: Sequence[str] | None = None, C: float = 0.01,
           epochs: int = 15, seed: int = 1, bleu_scale: float = 1.0, length_scaled: bool = True) -> MiraResult:
    """Hope/fear batch MIRA with sentence BLEU+1; returns weights averaged over all steps.

    With ``length_scaled`` the sentence BLEU of each derivation is multiplied by
    its effective reference length, which puts the BLEU margin on the scale of
    word counts rather than of a single [0, 1] score.
    """
    names = list(names) if names is not None else pool.feature_names()
    mats = pool.matrices(names)
    sbleu = []
    for _, _, S in mats:
        b = bleu_scale * sentence_bleu_plus1(S) if len(S) else np.zeros(0)
        if length_scaled and len(S):
            b = b * S[:, 2 * MAX_N + 1]
        sbleu.append(b)
    w = _as_vector(weights, names)
    w_sum = np.zeros_like(w)
    steps = 0
    rng = np.random.default_rng(seed)
    trace = []
    for _ in range(epochs):
        for s in rng.permutation(len(mats)):
            cols, F, S = mats[s]
            if len(S):
                score = F @ w[cols]
                hope = int(np.argmax(score + sbleu[s]))
                fear = int(np.argmax(score - sbleu[s]))
                delta = F[hope] - F[fear]
                loss = (sbleu[s][hope] - sbleu[s][fear]) - (score[hope] - score[fear])
                sq = float(delta @ delta)
                if loss > 0 and sq > 0:
                    w[cols] += min(C, loss / sq) * delta
            w_sum += w
            steps += 1
        trace.append(pool_bleu(mats, w_sum / steps))
    avg = w_sum / max(steps, 1)
    return MiraResult(_as_dict(avg, names, weights), trace)


def mira_step(F: np.ndarray, sbleu: np.ndarray, w: np.ndarray, C: float) -> np.ndarray:
    """Single hope/fear update on one sentence; returns the new weights."""
    score = F @ w
    hope = int(np.argmax(score + sbleu))
    fear = int(np.argmax(score - sbleu))
    delta = F[hope] - F[fear]
    loss = (sbleu[hope] - sbleu[fear]) - (score[hope] - score[fear])
    sq = float(delta @ delta)
    if loss > 0 and sq > 0:
        return w + min(C, loss / sq) * delta
    return w.copy()


# ---------------------------------------------------------------------------
# outer loop


@dataclass
class TuneResult:
    weights: dict
    trace: list = field(default_factory=list)  # (weights, dev BLEU of 1-best decode) per evaluated point
    pool_sizes: list = field(default_factory=list)


def tune_loop(decode_nbest: Callable[[dict], list], ref_sets, weights: dict, optimizer: str = "mert",
              iterations: int = 5, opt_kwargs: dict | None = None) -> TuneResult:
    """Decode dev, grow the pool, re-optimize; repeat.

    ``decode_nbest(weights)`` returns one ranked derivation list per dev
    sentence.  Every weight vector in the trace is scored by decoding with
    it; the best-scoring one is returned (the initial weights for zero
    iterations).
    """
    opt_kwargs = dict(opt_kwargs or {})
    pool = NBestPool(ref_sets)
    result = TuneResult(dict(weights))
    w = dict(weights)
    for it in range(iterations + 1):
        nbests = decode_nbest(w)
        stats = np.array([bleu_stats(lst[0].tokens, refs) for lst, refs in zip(nbests, ref_sets)])
        dev = float(bleu_from_stats(stats.sum(0)))
        result.trace.append((dict(w), dev))
        log.info("tune iteration %d: dev BLEU %.2f, pool %d", it, dev, len(pool))
        if it == iterations:
            break
        for sid, lst in enumerate(nbests):
            pool.add(sid, lst)
        result.pool_sizes.append(len(pool))
        if optimizer == "mert":
            w = mert(pool, w, **opt_kwargs).weights
        elif optimizer == "mira":
            w = kbmira(pool, w, **opt_kwargs).weights
        else:
            raise ValueError(f"unknown optimizer {optimizer!r}")
    best = max(range(len(result.trace)), key=lambda k: (result.trace[k][1], -k))
    result.weights = dict(result.trace[best][0])
    return result


def write_trace(result: TuneResult, path) -> None:
    """One weights line per iteration, dev BLEU appended as a comment."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for it, (w, b) in enumerate(result.trace):
            items = " ".join(f"{k}={float(w[k])!r}" for k in sorted(w, key=lambda n: (is_sparse(n), n)))
            f.write(f"{items} # iteration={it} dev_bleu={b:.4f}\n")
