"""IBM Model 1 word alignment, symmetrization and target-word affiliations.

Links are ``(j, i)`` pairs: source position ``j``, target position ``i``.
The Pharaoh text format writes them as ``j-i`` tokens.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

NULL = "<null>"
FLOOR = 1e-12


@dataclass(frozen=True)
class AlignmentMatrix:
    J: int
    I: int
    links: frozenset

    def __post_init__(self):
        object.__setattr__(self, "links", frozenset(self.links))
        for j, i in self.links:
            if not (0 <= j < self.J and 0 <= i < self.I):
                raise ValueError(f"link {j}-{i} outside a {self.J}x{self.I} matrix")

    def to_pharaoh(self) -> str:
        return " ".join(f"{j}-{i}" for j, i in sorted(self.links))

    @classmethod
    def from_pharaoh(cls, text: str, J: int, I: int) -> "AlignmentMatrix":
        links = set()
        for tok in text.split():
            j, i = tok.split("-")
            links.add((int(j), int(i)))
        return cls(J, I, frozenset(links))

    def transpose(self) -> "AlignmentMatrix":
        return AlignmentMatrix(self.I, self.J, frozenset((i, j) for j, i in self.links))


class TTable:
    """Dense lexical table t(target | source); row 0 is the NULL source word when present."""

    def __init__(self, src_vocab: Sequence[str], tgt_vocab: Sequence[str], probs: np.ndarray, has_null: bool = True):
        self.src_vocab = list(src_vocab)
        self.tgt_vocab = list(tgt_vocab)
        self.probs = probs
        self.has_null = has_null
        self.src_index = {w: k for k, w in enumerate(self.src_vocab)}
        self.tgt_index = {w: k for k, w in enumerate(self.tgt_vocab)}
        self.loglik: list = []

    def prob(self, e: str, f: str | None) -> float:
        """t(e | f); ``f=None`` means NULL.  Unseen pairs get the floor value."""
        fi = self.src_index.get(NULL if f is None else f)
        ei = self.tgt_index.get(e)
        if fi is None or ei is None:
            return FLOOR
        return max(float(self.probs[fi, ei]), FLOOR)

    def row(self, src: Sequence[str], tgt: Sequence[str]) -> np.ndarray:
        """Matrix of t(tgt_i | src_j) with shape (len(src), len(tgt)), floored."""
        fi = [self.src_index.get(f, -1) for f in src]
        ei = [self.tgt_index.get(e, -1) for e in tgt]
        out = np.full((len(src), len(tgt)), FLOOR)
        for a, f in enumerate(fi):
            if f < 0:
                continue
            for b, e in enumerate(ei):
                if e >= 0:
                    out[a, b] = max(self.probs[f, e], FLOOR)
        return out

    def write(self, path, threshold: float = 1e-7) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            rows, cols = np.nonzero(self.probs > threshold)
            for r, c in zip(rows, cols):
                fh.write(f"{self.src_vocab[r]} {self.tgt_vocab[c]} {float(self.probs[r, c])!r}\n")

    @classmethod
    def read(cls, path) -> "TTable":
        entries = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                f, e, p = line.split()
                entries.append((f, e, float(p)))
        src = sorted({f for f, _, _ in entries} | {NULL}, key=lambda w: (w != NULL, w))
        tgt = sorted({e for _, e, _ in entries})
        t = cls(src, tgt, np.zeros((len(src), len(tgt))))
        for f, e, p in entries:
            t.probs[t.src_index[f], t.tgt_index[e]] = p
        return t


def train_ibm1(pairs: Sequence[tuple[Sequence[str], Sequence[str]]], iterations: int = 5,
               include_null: bool = True) -> TTable:
    """EM training of t(e|f).  ``pairs`` holds (source, target) token sequences.

    The corpus log-likelihood of each iteration's starting parameters is
    appended to ``table.loglik``; the last entry scores the final table.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if not pairs:
        raise ValueError("empty corpus")
    src_words = sorted({f for s, _ in pairs for f in s})
    tgt_words = sorted({e for _, t in pairs for e in t})
    src_vocab = ([NULL] if include_null else []) + src_words
    s_index = {w: k for k, w in enumerate(src_vocab)}
    t_index = {w: k for k, w in enumerate(tgt_words)}
    Vs, Vt = len(src_vocab), len(tgt_words)

    f_idx, e_idx, group, norm = [], [], [], []
    g = 0
    for src, tgt in pairs:
        fs = ([0] if include_null else []) + [s_index[f] for f in src]
        denom = float(len(fs))
        for e in tgt:
            ei = t_index[e]
            f_idx.extend(fs)
            e_idx.extend([ei] * len(fs))
            group.extend([g] * len(fs))
            norm.append(denom)
            g += 1
    f_idx = np.asarray(f_idx, dtype=np.int64)
    e_idx = np.asarray(e_idx, dtype=np.int64)
    group = np.asarray(group, dtype=np.int64)
    norm = np.asarray(norm)
    pair_idx = f_idx * Vt + e_idx

    T = np.full((Vs, Vt), 1.0 / Vt)
    loglik = []
    for _ in range(iterations):
        p = T[f_idx, e_idx]
        denom = np.bincount(group, weights=p, minlength=g)
        loglik.append(float(np.sum(np.log(denom / norm))))
        post = p / denom[group]
        counts = np.bincount(pair_idx, weights=post, minlength=Vs * Vt).reshape(Vs, Vt)
        totals = counts.sum(axis=1, keepdims=True)
        T = np.divide(counts, totals, out=np.full_like(counts, 1.0 / Vt), where=totals > 0)
    p = T[f_idx, e_idx]
    denom = np.bincount(group, weights=p, minlength=g)
    loglik.append(float(np.sum(np.log(denom / norm))))
    table = TTable(src_vocab, tgt_words, T, has_null=include_null)
    table.loglik = loglik
    return table


def viterbi_align(ttable: TTable, src: Sequence[str], tgt: Sequence[str]) -> AlignmentMatrix:
    """Best source position for each target word; NULL-aligned words stay unlinked.

    Ties go to the smaller position, with NULL counting as position -1.
    """
    links = set()
    if not src or not tgt:
        return AlignmentMatrix(len(src), len(tgt), frozenset())
    table = ttable.row(src, tgt)
    if ttable.has_null:
        null_row = np.array([ttable.prob(e, None) for e in tgt])
        table = np.vstack([null_row, table])
    best = np.argmax(table, axis=0)
    offset = 1 if ttable.has_null else 0
    for i, j in enumerate(best):
        j = int(j) - offset
        if j >= 0:
            links.add((j, i))
    return AlignmentMatrix(len(src), len(tgt), frozenset(links))


_NEIGHBORS = ((-1, 0), (0, -1), (1, 0), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1))


def symmetrize(fwd: AlignmentMatrix, bwd: AlignmentMatrix, heuristic: str = "grow-diag") -> AlignmentMatrix:
    """Combine two directional alignments given in the same (J, I) orientation."""
    if (fwd.J, fwd.I) != (bwd.J, bwd.I):
        raise ValueError(f"dimension mismatch: {fwd.J}x{fwd.I} vs {bwd.J}x{bwd.I}")
    inter = fwd.links & bwd.links
    union = fwd.links | bwd.links
    if heuristic == "intersection":
        return AlignmentMatrix(fwd.J, fwd.I, inter)
    if heuristic == "union":
        return AlignmentMatrix(fwd.J, fwd.I, union)
    if heuristic != "grow-diag":
        raise ValueError(f"unknown heuristic {heuristic!r}")
    current = set(inter)
    src_aligned = {j for j, _ in current}
    tgt_aligned = {i for _, i in current}
    changed = True
    while changed:
        changed = False
        for j, i in sorted(current):
            for dj, di in _NEIGHBORS:
                cand = (j + dj, i + di)
                if cand in union and cand not in current:
                    if cand[0] not in src_aligned or cand[1] not in tgt_aligned:
                        current.add(cand)
                        src_aligned.add(cand[0])
                        tgt_aligned.add(cand[1])
                        changed = True
    return AlignmentMatrix(fwd.J, fwd.I, frozenset(current))


def affiliate(alignment: AlignmentMatrix) -> list[int]:
    """Affiliated source position for every target position.

    Linked targets take the middle of their linked positions (lower middle for
    an even count).  Unlinked targets copy the nearest linked target, the right
    one on a distance tie.  Without any links, target ``i`` maps to
    ``min(i, J - 1)``.
    """
    J, I = alignment.J, alignment.I
    if I < 1 or J < 1:
        raise ValueError("affiliation needs I >= 1 and J >= 1")
    per_target = [[] for _ in range(I)]
    for j, i in alignment.links:
        per_target[i].append(j)
    own = [None] * I
    for i, js in enumerate(per_target):
        if js:
            js.sort()
            own[i] = js[(len(js) - 1) // 2]
    linked = [i for i in range(I) if own[i] is not None]
    if not linked:
        return [min(i, J - 1) for i in range(I)]
    out = []
    for i in range(I):
        if own[i] is not None:
            out.append(own[i])
            continue
        # right neighbour wins ties: compare (distance, -position)
        nearest = min(linked, key=lambda k: (abs(k - i), -k))
        out.append(own[nearest])
    return out


def align_corpus(pairs: Sequence[tuple[Sequence[str], Sequence[str]]], iterations: int = 5,
                 heuristic: str = "grow-diag", fwd: TTable | None = None, bwd: TTable | None = None):
    """Train both directions (unless given) and return (alignments, fwd table, bwd table).

    ``fwd`` models t(target | source); ``bwd`` models t(source | target).
    """
    if fwd is None:
        fwd = train_ibm1(pairs, iterations)
    if bwd is None:
        bwd = train_ibm1([(t, s) for s, t in pairs], iterations)
    out = []
    for s, t in pairs:
        a = viterbi_align(fwd, s, t)
        b = viterbi_align(bwd, t, s).transpose()
        out.append(symmetrize(a, b, heuristic))
    return out, fwd, bwd


def write_alignments(alignments: Iterable[AlignmentMatrix], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for a in alignments:
            fh.write(a.to_pharaoh() + "\n")


def read_alignments(path, pairs: Sequence[tuple[Sequence[str], Sequence[str]]]) -> list[AlignmentMatrix]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) != len(pairs):
        raise ValueError(f"{path}: {len(lines)} alignment lines for {len(pairs)} sentence pairs")
    return [AlignmentMatrix.from_pharaoh(l, len(s), len(t)) for l, (s, t) in zip(lines, pairs)]
