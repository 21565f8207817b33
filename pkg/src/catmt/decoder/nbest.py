"""N-best list files: ``id ||| tokens ||| name=value ... ||| score`` per line."""

from __future__ import annotations

from collections import defaultdict

from ..corpusio import CorpusFormatError
from .search import Derivation


def format_entry(sent_id: int, der: Derivation) -> str:
    feats = " ".join(f"{k}={float(v)!r}" for k, v in sorted(der.features.items()))
    return f"{sent_id} ||| {' '.join(der.tokens)} ||| {feats} ||| {float(der.score)!r}"


def write_nbest(nbests, path) -> None:
    """``nbests`` is a sequence (one per sentence) of derivation lists."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for sid, lst in enumerate(nbests):
            for der in lst:
                f.write(format_entry(sid, der) + "\n")


def parse_entry(line: str, path=None, lineno=None) -> tuple[int, Derivation]:
    parts = line.rstrip("\n").split(" ||| ")
    if len(parts) != 4:
        raise CorpusFormatError("expected 4 '|||'-separated fields", path, lineno)
    try:
        sid = int(parts[0])
        feats = {}
        for item in parts[2].split():
            k, _, v = item.rpartition("=")
            feats[k] = float(v)
        score = float(parts[3])
    except ValueError as e:
        raise CorpusFormatError(str(e), path, lineno) from None
    tokens = tuple(parts[1].split())
    return sid, Derivation(tokens, score, feats, [])


def read_nbest(path) -> dict:
    out = defaultdict(list)
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if line.strip():
                sid, der = parse_entry(line, path, lineno)
                out[sid].append(der)
    return dict(out)
