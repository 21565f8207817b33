"""Decoder configuration, weights, model bundle and per-phrase feature firing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from ..align import AlignmentMatrix, affiliate
from ..corpusio import CorpusFormatError, Vocabulary, read_keyvalue
from ..ngramlm import NgramModel
from ..phrasetable import (CategoryLexicon, PhraseEntry, PhraseTable, SparseInventory, category_lexicon_score,
                           passthrough_entry)

TM_FEATURES = ("tm_pts", "tm_pst", "tm_lexf", "tm_lexb")
CORE_FEATURES = TM_FEATURES + ("lm", "word_penalty", "phrase_penalty", "distortion", "oov")
META_FEATURES = ("catvec", "catlex", "nnjm", "btm")
DENSE_FEATURES = CORE_FEATURES + META_FEATURES

DEFAULT_WEIGHTS = {
    "tm_pts": 0.2, "tm_pst": 0.2, "tm_lexf": 0.2, "tm_lexb": 0.2,
    "lm": 0.5, "word_penalty": 0.0, "phrase_penalty": 0.0, "distortion": -0.3, "oov": -1.0,
    "catvec": 0.2, "catlex": 0.2, "nnjm": 0.2, "btm": 0.2,
}


def is_sparse(name: str) -> bool:
    return name.startswith(("wp:", "cwp:"))


@dataclass
class DecoderConfig:
    beam_size: int | None = 100
    threshold: float = 1e-4  # relative to the best hypothesis; 0 disables
    distortion_limit: int | None = 6
    nbest: int = 200
    table_limit: int | None = 20
    recombine: bool = True
    catvec_eps: float = 1e-4
    # feature toggles, one per meta-information mechanism
    wp: bool = False
    cwp: bool = False
    catvec: bool = False
    catlex: bool = False
    nnjm: bool = False
    btm: bool = False

    @classmethod
    def unpruned(cls, **kw) -> "DecoderConfig":
        base = dict(beam_size=None, threshold=0.0, distortion_limit=None, table_limit=None)
        base.update(kw)
        return cls(**base)

    def dense_features(self) -> tuple:
        return CORE_FEATURES + tuple(f for f in META_FEATURES if getattr(self, f))

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for fl in fields(self):
                v = getattr(self, fl.name)
                f.write(f"{fl.name}={'none' if v is None else v}\n")

    @classmethod
    def read(cls, path) -> "DecoderConfig":
        return cls.from_dict(read_keyvalue(path), path)

    @classmethod
    def from_dict(cls, kv: dict, path=None) -> "DecoderConfig":
        out = {}
        known = {fl.name: fl for fl in fields(cls)}
        for k, v in kv.items():
            if k not in known:
                raise CorpusFormatError(f"unknown decoder option {k!r}", path)
            default = getattr(cls(), k)
            s = str(v).strip().lower()
            if isinstance(default, bool):
                out[k] = s in ("1", "true", "yes", "on")
            elif s in ("none", "inf", ""):
                out[k] = None
            elif k in ("threshold", "catvec_eps"):
                out[k] = float(v)
            else:
                out[k] = int(v)
        return cls(**out)


def read_weights(path) -> dict:
    w = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise CorpusFormatError("expected 'name<TAB>value'", path, lineno)
            w[parts[0]] = float(parts[1])
    return w


def write_weights(weights: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for k in sorted(weights, key=lambda n: (is_sparse(n), n)):
            f.write(f"{k}\t{float(weights[k])!r}\n")


def dot(weights: dict, feats: dict) -> float:
    s = 0.0
    for k, v in feats.items():
        s += weights.get(k, 0.0) * v
    return s


# ---------------------------------------------------------------------------
# neural feature wrappers


class NeuralFeature:
    """Per-sentence score tables for a neural lexical model.

    ``kind`` is ``"nnjm"`` (raw self-normalized logits) or ``"btm"``
    (log-softmax).  Scores are looked up by (target word, source position).
    """

    def __init__(self, kind: str, model, src_vocab: Vocabulary, tgt_vocab: Vocabulary):
        if kind not in ("nnjm", "btm"):
            raise ValueError(kind)
        self.kind = kind
        self.model = model
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        self._scorer = model.precomputed_scorer() if kind == "nnjm" else None

    def sentence_table(self, source: Sequence[str], category: int, words: Sequence[str]) -> dict:
        src_ids = self.src_vocab.encode(source)
        cand = self.tgt_vocab.encode(words)
        if self.kind == "nnjm":
            M = self._scorer.score_matrix(src_ids, category, cand)
        else:
            M = self.model.precompute(src_ids, category, cand)
        return {w: M[k] for k, w in enumerate(words)}


@dataclass
class Models:
    phrase_table: PhraseTable
    lm: NgramModel
    n_categories: int
    catlex: CategoryLexicon | None = None
    sparse: SparseInventory | None = None
    nnjm: NeuralFeature | None = None
    btm: NeuralFeature | None = None


# ---------------------------------------------------------------------------
# translation options


@dataclass
class Option:
    j1: int
    j2: int
    entry: PhraseEntry
    target: tuple
    feats: dict  # every feature except lm and distortion
    score: float  # weights . feats
    lm_est: float  # context-free LM estimate of the target phrase

    @property
    def length(self) -> int:
        return self.j2 - self.j1 + 1


def phrase_affiliations(entry: PhraseEntry) -> list:
    return affiliate(AlignmentMatrix(len(entry.source), len(entry.target), frozenset(entry.align)))


def feature_fire(entry: PhraseEntry, j1: int, category: int, models: Models, config: DecoderConfig,
                 neural_tables: dict | None = None) -> dict:
    """Features of applying ``entry`` at source offset ``j1``, excluding LM and distortion."""
    feats = {
        "tm_pts": math.log(entry.p_tgt_given_src),
        "tm_pst": math.log(entry.p_src_given_tgt),
        "tm_lexf": math.log(entry.lex_fwd),
        "tm_lexb": math.log(entry.lex_bwd),
        "word_penalty": float(len(entry.target)),
        "phrase_penalty": 1.0,
        "oov": 1.0 if entry.oov else 0.0,
    }
    if config.catvec:
        feats["catvec"] = math.log(entry.cat_vec[category] + config.catvec_eps)
    if config.catlex:
        feats["catlex"] = category_lexicon_score(models.catlex, entry.target, category) if models.catlex else 0.0
    if (config.nnjm or config.btm) and neural_tables is not None:
        aff = phrase_affiliations(entry)
        for name in ("nnjm", "btm"):
            if getattr(config, name):
                table = neural_tables[name]
                feats[name] = float(sum(table[e][j1 + b] for e, b in zip(entry.target, aff)))
    if (config.wp or config.cwp) and models.sparse is not None:
        for j, i in entry.align:
            f, e = entry.source[j], entry.target[i]
            if config.wp and (f, e) in models.sparse.pairs:
                name = f"wp:{f}:{e}"
                feats[name] = feats.get(name, 0.0) + 1.0
            if config.cwp and (category, f, e) in models.sparse.cat_pairs:
                name = f"cwp:{category}:{f}:{e}"
                feats[name] = feats.get(name, 0.0) + 1.0
    return feats


@dataclass
class SentenceContext:
    source: tuple
    category: int
    options: dict  # (j1, j2) -> list of Option
    future: np.ndarray  # future[j1, j2] best estimate for covering span j1..j2


def lm_phrase_estimate(lm: NgramModel, target: Sequence[str]) -> float:
    total, hist = 0.0, []
    for w in target:
        total += lm.logprob(hist, w)
        hist.append(w)
    return total


def prepare(source: Sequence[str], category: int, models: Models, weights: dict,
            config: DecoderConfig) -> SentenceContext:
    source = tuple(source)
    J = len(source)
    pt = models.phrase_table
    entries = {}
    for j1 in range(J):
        for j2 in range(j1, min(J, j1 + pt.max_source_len)):
            opts = pt.options(source[j1:j2 + 1], config.table_limit)
            if opts:
                entries[(j1, j2)] = opts
        if (j1, j1) not in entries:
            entries[(j1, j1)] = [passthrough_entry(source[j1], models.n_categories)]

    neural_tables = None
    if config.nnjm or config.btm:
        words = sorted({e for opts in entries.values() for ent in opts for e in ent.target})
        neural_tables = {}
        for name in ("nnjm", "btm"):
            if getattr(config, name):
                feat = getattr(models, name)
                if feat is None:
                    raise ValueError(f"feature {name} enabled but no {name} model loaded")
                neural_tables[name] = feat.sentence_table(source, category, words)

    w_lm = weights.get("lm", 0.0)
    options = {}
    for (j1, j2), opts in entries.items():
        lst = []
        for ent in opts:
            feats = feature_fire(ent, j1, category, models, config, neural_tables)
            est = lm_phrase_estimate(models.lm, ent.target)
            lst.append(Option(j1, j2, ent, ent.target, feats, dot(weights, feats), est))
        options[(j1, j2)] = lst

    # span future cost: best single option, then best split
    future = np.full((J, J), -np.inf)
    for (j1, j2), lst in options.items():
        future[j1, j2] = max(o.score + w_lm * o.lm_est for o in lst)
    for length in range(2, J + 1):
        for j1 in range(J - length + 1):
            j2 = j1 + length - 1
            best = future[j1, j2]
            for m in range(j1, j2):
                cand = future[j1, m] + future[m + 1, j2]
                if cand > best:
                    best = cand
            future[j1, j2] = best
    return SentenceContext(source, category, options, future)
