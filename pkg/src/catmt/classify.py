"""Multinomial naive Bayes category classifier for source titles.

Used to label training data that lacks category meta information.  Token
likelihoods reserve one extra bucket for unseen tokens so that each
category's distribution sums to one over the training vocabulary plus the
unseen mass; at prediction time unseen tokens are skipped.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .corpusio import CorpusFormatError, ParallelRecord


@dataclass
class ClassifierModel:
    log_prior: np.ndarray  # (C,)
    log_likelihood: np.ndarray  # (C, V); column order follows ``vocab``
    log_unseen: np.ndarray  # (C,) log mass of the unseen-token bucket
    vocab: list
    alpha: float

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.vocab)}

    @property
    def n_categories(self) -> int:
        return len(self.log_prior)

    def write(self, path) -> None:
        C, V = self.log_likelihood.shape
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(f"nbayes {C} {V} {self.alpha!r}\n")
            f.write("prior " + " ".join(repr(float(x)) for x in self.log_prior) + "\n")
            f.write("unseen " + " ".join(repr(float(x)) for x in self.log_unseen) + "\n")
            for j, tok in enumerate(self.vocab):
                f.write(tok + " " + " ".join(repr(float(x)) for x in self.log_likelihood[:, j]) + "\n")

    @classmethod
    def read(cls, path) -> "ClassifierModel":
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
        head = lines[0].split()
        if len(head) != 4 or head[0] != "nbayes":
            raise CorpusFormatError("expected header 'nbayes C V alpha'", path, 1)
        C, V, alpha = int(head[1]), int(head[2]), float(head[3])
        if len(lines) != V + 3:
            raise CorpusFormatError(f"expected {V} likelihood rows", path)

        def row(k, tag):
            parts = lines[k].split()
            if parts[0] != tag or len(parts) != C + 1:
                raise CorpusFormatError(f"expected '{tag}' row with {C} values", path, k + 1)
            return np.array([float(x) for x in parts[1:]])

        prior = row(1, "prior")
        unseen = row(2, "unseen")
        vocab, cols = [], []
        for k in range(3, V + 3):
            parts = lines[k].split()
            if len(parts) != C + 1:
                raise CorpusFormatError(f"expected token and {C} values", path, k + 1)
            vocab.append(parts[0])
            cols.append([float(x) for x in parts[1:]])
        ll = np.array(cols).T.reshape(C, V)
        return cls(prior, ll, unseen, vocab, alpha)


def train_classifier(labeled: Iterable[tuple[Sequence[str], int]], n_categories: int,
                     alpha: float = 1.0, labels: Sequence[str] | None = None) -> ClassifierModel:
    """Fit log priors and additively smoothed token log likelihoods."""
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    doc_counts = np.zeros(n_categories)
    tok_counts = [Counter() for _ in range(n_categories)]
    for toks, cat in labeled:
        doc_counts[cat] += 1
        tok_counts[cat].update(toks)
    for c in range(n_categories):
        if doc_counts[c] == 0:
            name = labels[c] if labels is not None else str(c)
            raise ValueError(f"category {name} has no training examples")
    vocab = sorted(set().union(*tok_counts))
    V = len(vocab)
    counts = np.array([[tc[t] for t in vocab] for tc in tok_counts], dtype=float).reshape(n_categories, V)
    denom = counts.sum(axis=1, keepdims=True) + alpha * (V + 1)
    log_ll = np.log(counts + alpha) - np.log(denom)
    log_unseen = np.log(alpha) - np.log(denom[:, 0])
    log_prior = np.log(doc_counts) - np.log(doc_counts.sum())
    return ClassifierModel(log_prior, log_ll, log_unseen, vocab, float(alpha))


def predict_category(model: ClassifierModel, tokens: Sequence[str]) -> tuple[int, np.ndarray]:
    scores = model.log_prior.copy()
    for t in tokens:
        j = model.index.get(t)
        if j is not None:
            scores += model.log_likelihood[:, j]
    m = scores.max()
    post = np.exp(scores - m)
    post /= post.sum()
    # np.argmax returns the first maximum, i.e. the lowest id on ties
    return int(np.argmax(scores)), post


def label_corpus(model: ClassifierModel, records: Iterable[ParallelRecord],
                 overwrite: bool = False, labeled_mask: Sequence[bool] | None = None) -> list[ParallelRecord]:
    """Assign predicted categories.

    ``labeled_mask[k]`` marks records that already carry a trusted label; those
    are kept unless ``overwrite`` is set.  Without a mask every record counts
    as unlabeled.
    """
    out = []
    for k, rec in enumerate(records):
        has_label = labeled_mask is not None and labeled_mask[k]
        if has_label and not overwrite:
            out.append(rec)
            continue
        cat, _ = predict_category(model, rec.source)
        out.append(replace(rec, category=cat))
    return out


def accuracy(model: ClassifierModel, records: Sequence[ParallelRecord]) -> float:
    if not records:
        return math.nan
    hits = sum(predict_category(model, r.source)[0] == r.category for r in records)
    return hits / len(records)
