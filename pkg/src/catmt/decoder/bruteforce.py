"""Exhaustive enumeration of derivations for short inputs; an oracle for the stack search."""

from __future__ import annotations

from typing import Iterator, Sequence

from ..corpusio import BOS, EOS
from .model import DecoderConfig, Models, dot, prepare
from .search import Derivation

MAX_BRUTE_FORCE_LEN = 7


def enumerate_derivations(source: Sequence[str], category: int, models: Models, weights: dict,
                          config: DecoderConfig | None = None) -> Iterator[Derivation]:
    """Generate every derivation allowed by the option set and distortion limit, best first.

    A plain depth-first walk over all segmentations and orderings: option
    features are dotted with the weights, the LM is applied word by word
    along the path (no caching, no recombination) and distortion is summed
    over the phrase order.  Only the option list is shared with the decoder.
    """
    config = config or DecoderConfig.unpruned()
    J = len(source)
    if J > MAX_BRUTE_FORCE_LEN:
        raise ValueError(f"brute force limited to {MAX_BRUTE_FORCE_LEN} source words")
    return _enumerate(source, category, models, weights, config)


def _enumerate(source, category, models, weights, config):
    J = len(source)
    sc = prepare(source, category, models, weights, config)
    by_start = {}
    for (j1, j2), opts in sc.options.items():
        by_start.setdefault(j1, []).extend(opts)
    static = {id(o): dot(weights, o.feats) for opts in sc.options.values() for o in opts}
    limit = config.distortion_limit
    n1 = models.lm.order - 1
    memo = {}

    def logprob(h, w):
        v = memo.get((h, w))
        if v is None:
            v = memo[(h, w)] = models.lm.logprob(h, w)
        return v

    w_lm = weights.get("lm", 0.0)
    w_d = weights.get("distortion", 0.0)
    leaves = []  # (score, lm total, distortion total, option path)
    full = (1 << J) - 1
    moves = {j1: [(o, ((1 << (o.j2 + 1)) - 1) ^ ((1 << j1) - 1), static[id(o)]) for o in opts]
             for j1, opts in by_start.items()}
    path = []

    def rec(cov, last_end, hist, score, lm_total, dist_total):
        if cov == full:
            lp = logprob(hist, EOS)
            leaves.append((score + w_lm * lp, lm_total + lp, dist_total, tuple(path)))
            return
        for j1 in range(J):
            if cov >> j1 & 1:
                continue
            dist = abs(j1 - last_end - 1)
            if limit is not None and dist > limit:
                continue
            for o, mask, st in moves[j1]:
                if cov & mask:
                    continue
                h, lp = hist, 0.0
                for w in o.target:
                    lp += logprob(h, w)
                    h = (h + (w,))[-n1:] if n1 else ()
                path.append(o)
                rec(cov | mask, o.j2, h, score + st + w_lm * lp + w_d * dist, lm_total + lp, dist_total + dist)
                path.pop()

    rec(0, -1, (BOS,), 0.0, 0.0, 0)
    leaves.sort(key=lambda x: -x[0])
    for score, lm_total, dist_total, opts in leaves:
        yield _materialize(score, lm_total, dist_total, opts)


def _materialize(score, lm_total, dist_total, opts) -> Derivation:
    feats = {}
    for o in opts:
        for k, v in o.feats.items():
            feats[k] = feats.get(k, 0.0) + v
    feats["lm"] = lm_total
    feats["distortion"] = float(dist_total)
    words = tuple(w for o in opts for w in o.target)
    return Derivation(words, score, feats, [(o.j1, o.j2, o.target) for o in opts])


def brute_force_nbest(source, category, models, weights, config=None, n=None, distinct=True) -> list:
    out, seen = [], set()
    for d in enumerate_derivations(source, category, models, weights, config):
        if n is not None and len(out) >= n:
            break
        if distinct:
            if d.tokens in seen:
                continue
            seen.add(d.tokens)
        out.append(d)
    return out


def brute_force_decode(source, category, models, weights, config=None) -> Derivation:
    return next(enumerate_derivations(source, category, models, weights, config))
