"""Stack decoding with recombination, pruning and exact k-best extraction over the search graph."""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass
from typing import Sequence

from ..corpusio import BOS, EOS
from .model import DecoderConfig, Models, SentenceContext, dot, prepare


@dataclass
class Derivation:
    tokens: tuple
    score: float
    features: dict
    phrases: list  # (j1, j2, target) in output order


class _Node:
    __slots__ = ("key", "cov", "last", "ctx", "score", "arcs", "fc")

    def __init__(self, key, cov, last, ctx, score, fc):
        self.key, self.cov, self.last, self.ctx = key, cov, last, ctx
        self.score, self.fc = score, fc
        self.arcs = []


class _Arc:
    __slots__ = ("prev", "option", "lm", "dist", "delta")

    def __init__(self, prev, option, lm, dist, delta):
        self.prev, self.option, self.lm, self.dist, self.delta = prev, option, lm, dist, delta


class _LmScorer:
    """Phrase LM scoring backed by a (context, word) cache that outlives the sentence."""

    def __init__(self, lm):
        self.lm = lm
        self.n1 = lm.order - 1
        cache = getattr(lm, "_decoder_cache", None)
        if cache is None or len(cache) > 2_000_000:
            cache = lm._decoder_cache = {}
        self.cache = cache

    def logprob(self, hist: tuple, w: str) -> float:
        key = (hist, w)
        v = self.cache.get(key)
        if v is None:
            v = self.cache[key] = self.lm.logprob(hist, w)
        return v

    def extend(self, ctx: tuple, words: tuple, final: bool):
        total = 0.0
        hist = ctx
        n1 = self.n1
        for w in words:
            total += self.logprob(hist, w)
            hist = (hist + (w,))[-n1:] if n1 else ()
        if final:
            total += self.logprob(hist, EOS)
            hist = ()
        return total, hist


def _coverage_future(cov: int, J: int, future) -> float:
    total = 0.0
    j = 0
    while j < J:
        if cov >> j & 1:
            j += 1
            continue
        k = j
        while k + 1 < J and not cov >> (k + 1) & 1:
            k += 1
        total += future[j, k]
        j = k + 1
    return total


def _span_mask(j1: int, j2: int) -> int:
    return ((1 << (j2 + 1)) - 1) ^ ((1 << j1) - 1)


def search_graph(sc: SentenceContext, models: Models, weights: dict, config: DecoderConfig):
    """Run the stack search; returns the final node (all complete hypotheses) or None."""
    J = len(sc.source)
    w_lm = weights.get("lm", 0.0)
    w_d = weights.get("distortion", 0.0)
    lm = _LmScorer(models.lm)
    full = (1 << J) - 1
    limit = config.distortion_limit
    log_thr = math.log(config.threshold) if config.threshold > 0 else -math.inf
    spans = sorted(sc.options)
    masks = {s: _span_mask(*s) for s in spans}
    uniq = itertools.count()

    root = _Node((0, -1, (BOS,)), 0, -1, (BOS,), 0.0, _coverage_future(0, J, sc.future))
    stacks = [dict() for _ in range(J + 1)]
    stacks[0][root.key] = root
    final = _Node(("final",), full, J - 1, (), -math.inf, 0.0)

    for k in range(J):
        nodes = list(stacks[k].values())
        if not nodes:
            continue
        nodes.sort(key=lambda n: -(n.score + n.fc))
        best = nodes[0].score + nodes[0].fc
        kept = [n for n in nodes if n.score + n.fc >= best + log_thr]
        if config.beam_size is not None:
            kept = kept[:config.beam_size]
        for node in kept:
            for span in spans:
                if node.cov & masks[span]:
                    continue
                j1, j2 = span
                dist = abs(j1 - node.last - 1)
                if limit is not None and dist > limit:
                    continue
                cov = node.cov | masks[span]
                done = cov == full
                for opt in sc.options[span]:
                    lmd, ctx = lm.extend(node.ctx, opt.target, done)
                    delta = opt.score + w_lm * lmd + w_d * dist
                    arc = _Arc(node, opt, lmd, dist, delta)
                    score = node.score + delta
                    if done:
                        target = final
                    else:
                        key = (cov, j2, ctx) if config.recombine else next(uniq)
                        stack = stacks[k + opt.length]
                        target = stack.get(key)
                        if target is None:
                            target = stack[key] = _Node(key, cov, j2, ctx, -math.inf,
                                                        _coverage_future(cov, J, sc.future))
                    target.arcs.append(arc)
                    if score > target.score:
                        target.score = score
                        # keep the best arc first so the 1-best path is arcs[0] all the way back
                        target.arcs[0], target.arcs[-1] = target.arcs[-1], target.arcs[0]
    return final if final.arcs else None


def _derivation(arcs: Sequence[_Arc]) -> Derivation:
    feats: dict = {}
    words, phrases = [], []
    score = 0.0
    for a in arcs:
        o = a.option
        for name, v in o.feats.items():
            feats[name] = feats.get(name, 0.0) + v
        feats["lm"] = feats.get("lm", 0.0) + a.lm
        feats["distortion"] = feats.get("distortion", 0.0) + a.dist
        words.extend(o.target)
        phrases.append((o.j1, o.j2, o.target))
        score += a.delta
    return Derivation(tuple(words), score, feats, phrases)


def _best_path(node: _Node) -> list:
    arcs = []
    while node.arcs:
        a = node.arcs[0]
        arcs.append(a)
        node = a.prev
    arcs.reverse()
    return arcs


def kbest_paths(final: _Node, n: int, distinct: bool = True, max_pops: int | None = None):
    """Paths in non-increasing score order.

    Best-first backward search from the final node; the priority of a partial
    path is the exact best forward score of its frontier node plus the
    accumulated suffix score, so paths pop in exact order.  With ``distinct``
    only the best derivation per surface string is kept.
    """
    tie = itertools.count()
    heap = [(-final.score, next(tie), final, 0.0, ())]
    out, seen = [], set()
    pops = 0
    max_pops = max_pops if max_pops is not None else 200 * n + 2000
    while heap and len(out) < n and pops < max_pops:
        neg, _, node, suffix, arcs = heapq.heappop(heap)
        pops += 1
        if not node.arcs:
            der = _derivation(arcs)
            if distinct:
                if der.tokens in seen:
                    continue
                seen.add(der.tokens)
            out.append(der)
            continue
        for a in node.arcs:
            s = suffix + a.delta
            heapq.heappush(heap, (-(a.prev.score + s), next(tie), a.prev, s, (a,) + arcs))
    return out


def monotone_fallback(sc: SentenceContext, models: Models, weights: dict) -> Derivation:
    """Left-to-right decode with the top option per word; used only if search produced nothing."""
    lm = _LmScorer(models.lm)
    arcs, ctx, prev = [], (BOS,), _Node(None, 0, -1, (BOS,), 0.0, 0.0)
    J = len(sc.source)
    for j in range(J):
        opt = sc.options[(j, j)][0]
        lmd, ctx = lm.extend(ctx, opt.target, j == J - 1)
        arcs.append(_Arc(prev, opt, lmd, 0, opt.score + weights.get("lm", 0.0) * lmd))
    return _derivation(arcs)


def _empty(models: Models, weights: dict) -> Derivation:
    lmd = models.lm.logprob((BOS,), EOS)
    feats = {"lm": lmd, "distortion": 0.0}
    return Derivation((), dot(weights, feats), feats, [])


def decode(source: Sequence[str], category: int, models: Models, weights: dict,
           config: DecoderConfig | None = None) -> Derivation:
    return decode_nbest(source, category, models, weights, config, n=1)[0]


def decode_nbest(source: Sequence[str], category: int, models: Models, weights: dict,
                 config: DecoderConfig | None = None, n: int | None = None,
                 distinct: bool = True) -> list:
    config = config or DecoderConfig()
    n = config.nbest if n is None else n
    if not len(source):
        return [_empty(models, weights)]
    sc = prepare(source, category, models, weights, config)
    final = search_graph(sc, models, weights, config)
    if final is None:
        return [monotone_fallback(sc, models, weights)]
    if n == 1:
        return [_derivation(_best_path(final))]
    return kbest_paths(final, n, distinct)
