"""Bidirectional GRU translation model p(e | whole source sentence, affiliated position).

Each direction runs a GRU over the source embeddings::

    z  = sigmoid(Wz x + Uz h + bz)
    r  = sigmoid(Wr x + Ur h + br)
    n  = tanh(Wn x + Un (r * h) + bn)
    h' = (1 - z) * h + z * n

The output layer is a softmax over the target vocabulary from the
concatenated forward and backward states at the affiliated source position.
Because the model ignores target history, all scores for a sentence can be
computed before search.

Category modes: ``none``; ``onehot-concat`` (one-hot appended to the
embedding at every position); ``embedding`` (a learned category embedding
appended instead); ``pseudo-token`` (a category token read before the
sentence, shifting every position by one).
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass

import numpy as np

from .common import TrainingDiverged, glorot, load_params, log_softmax, make_optimizer, save_params, sigmoid

log = logging.getLogger(__name__)

CAT_MODES = ("none", "onehot-concat", "embedding", "pseudo-token")


@dataclass
class BtmConfig:
    src_vocab_size: int
    tgt_vocab_size: int
    n_categories: int = 6
    d_emb: int = 32
    d_hid: int = 64
    cat_mode: str = "onehot-concat"
    d_cat: int = 8
    sample_size: int = 512
    lr: float = 0.01
    lr_decay: float = 0.9
    optimizer: str = "adam"
    epochs: int = 6
    batch_size: int = 32
    seed: int = 1

    def validate(self):
        if self.cat_mode not in CAT_MODES:
            raise ValueError(f"unknown BTM category mode {self.cat_mode!r}")
        if self.sample_size < 1:
            raise ValueError("sample_size must be >= 1")


def _gru_forward(A, Wh):
    """Run a GRU over pre-projected inputs A (T, B, 3H); returns states (T, B, H) and a cache."""
    T, B, H3 = A.shape
    H = H3 // 3
    Wz, Wr, Wn = Wh[:H], Wh[H:2 * H], Wh[2 * H:]
    h = np.zeros((B, H))
    hs = np.empty((T, B, H))
    cache = []
    for t in range(T):
        a = A[t]
        z = sigmoid(a[:, :H] + h @ Wz.T)
        r = sigmoid(a[:, H:2 * H] + h @ Wr.T)
        rh = r * h
        n = np.tanh(a[:, 2 * H:] + rh @ Wn.T)
        h_new = (1.0 - z) * h + z * n
        cache.append((h, z, r, rh, n))
        hs[t] = h_new
        h = h_new
    return hs, cache


def _gru_backward(dhs, Wh, cache):
    """Backprop through the GRU; returns (dA (T, B, 3H), dWh)."""
    T, B, H = dhs.shape
    Wz, Wr, Wn = Wh[:H], Wh[H:2 * H], Wh[2 * H:]
    dWh = np.zeros_like(Wh)
    dA = np.empty((T, B, 3 * H))
    dh_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        h, z, r, rh, n = cache[t]
        dh_new = dhs[t] + dh_next
        dz = dh_new * (n - h)
        dn = dh_new * z
        dh = dh_new * (1.0 - z)
        dan = dn * (1.0 - n * n)
        dWh[2 * H:] += dan.T @ rh
        drh = dan @ Wn
        dh += drh * r
        dr = drh * h
        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        dWh[:H] += daz.T @ h
        dWh[H:2 * H] += dar.T @ h
        dh += daz @ Wz + dar @ Wr
        dA[t, :, :H] = daz
        dA[t, :, H:2 * H] = dar
        dA[t, :, 2 * H:] = dan
        dh_next = dh
    return dA, dWh


class Btm:
    def __init__(self, config: BtmConfig, params: dict | None = None):
        config.validate()
        self.config = config
        self.params = params if params is not None else self._init_params(np.random.default_rng(config.seed))

    def _init_params(self, rng) -> dict:
        c = self.config
        H = c.d_hid
        p = {"E": rng.normal(0.0, 0.1, size=(c.src_vocab_size, c.d_emb))}
        for d in ("f", "b"):
            p[f"Wx_{d}"] = glorot(rng, (3 * H, c.d_emb))
            p[f"Wh_{d}"] = np.concatenate([glorot(rng, (H, H)) for _ in range(3)])
            p[f"bh_{d}"] = np.zeros(3 * H)
            if c.cat_mode == "onehot-concat":
                p[f"Wc_{d}"] = glorot(rng, (3 * H, c.n_categories))
            elif c.cat_mode == "embedding":
                p[f"Wc_{d}"] = glorot(rng, (3 * H, c.d_cat))
        if c.cat_mode == "embedding":
            p["Ec"] = rng.normal(0.0, 0.1, size=(c.n_categories, c.d_cat))
        elif c.cat_mode == "pseudo-token":
            p["Ep"] = rng.normal(0.0, 0.1, size=(c.n_categories, c.d_emb))
        p["O"] = glorot(rng, (c.tgt_vocab_size, 2 * H))
        p["ob"] = np.zeros(c.tgt_vocab_size)
        return p

    @property
    def shift(self) -> int:
        return 1 if self.config.cat_mode == "pseudo-token" else 0

    # ------------------------------------------------------------------
    # encoder

    def _project(self, emb, cats, d):
        """Input projection (T, B, 3H) for direction ``d``; the category term is added last."""
        p, mode = self.params, self.config.cat_mode
        A = emb @ p[f"Wx_{d}"].T + p[f"bh_{d}"]
        if mode == "onehot-concat":
            A = A + p[f"Wc_{d}"][:, cats].T[None, :, :]
        elif mode == "embedding":
            A = A + (p["Ec"][cats] @ p[f"Wc_{d}"].T)[None, :, :]
        return A

    def encode(self, S, cats):
        """States (T, B, 2H) for source id matrix S (B, J) and categories (B,)."""
        p = self.params
        emb = p["E"][S.T]  # (J, B, D)
        if self.config.cat_mode == "pseudo-token":
            emb = np.concatenate([p["Ep"][cats][None], emb], axis=0)
        A_f = self._project(emb, cats, "f")
        A_b = self._project(emb[::-1], cats, "b")
        hs_f, cache_f = _gru_forward(A_f, p["Wh_f"])
        hs_b, cache_b = _gru_forward(A_b, p["Wh_b"])
        states = np.concatenate([hs_f, hs_b[::-1]], axis=2)
        return states, (emb, cache_f, cache_b)

    def _encode_backward(self, dstates, S, cats, cache, grads):
        p, c = self.params, self.config
        emb, cache_f, cache_b = cache
        H = c.d_hid
        dA_f, grads["Wh_f"] = _gru_backward(dstates[:, :, :H], p["Wh_f"], cache_f)
        dA_b, grads["Wh_b"] = _gru_backward(dstates[::-1, :, H:], p["Wh_b"], cache_b)
        demb = np.zeros_like(emb)
        for d, dA, em in (("f", dA_f, emb), ("b", dA_b, emb[::-1])):
            flatA = dA.reshape(-1, 3 * H)
            grads[f"Wx_{d}"] = flatA.T @ em.reshape(-1, em.shape[2])
            grads[f"bh_{d}"] = flatA.sum(axis=0)
            dx = dA @ p[f"Wx_{d}"]
            if d == "f":
                demb += dx
            else:
                demb += dx[::-1]
            dAsum = dA.sum(axis=0)  # (B, 3H)
            if c.cat_mode == "onehot-concat":
                dWc = np.zeros_like(p[f"Wc_{d}"])
                np.add.at(dWc.T, cats, dAsum)
                grads[f"Wc_{d}"] = dWc
            elif c.cat_mode == "embedding":
                grads[f"Wc_{d}"] = dAsum.T @ p["Ec"][cats]
                dEc = grads.setdefault("Ec", np.zeros_like(p["Ec"]))
                np.add.at(dEc, cats, dAsum @ p[f"Wc_{d}"])
        if c.cat_mode == "pseudo-token":
            dEp = np.zeros_like(p["Ep"])
            np.add.at(dEp, cats, demb[0])
            grads["Ep"] = dEp
            demb = demb[1:]
        dE = np.zeros_like(p["E"])
        np.add.at(dE, S.T.reshape(-1), demb.reshape(-1, demb.shape[2]))
        grads["E"] = dE

    # ------------------------------------------------------------------
    # scoring

    def log_probs(self, src_ids, category: int) -> np.ndarray:
        """Full log-softmax over the target vocabulary at each source position: (J, V)."""
        S = np.asarray(src_ids, dtype=np.int64)[None, :]
        states, _ = self.encode(S, np.array([category]))
        states = states[self.shift:, 0, :]
        return log_softmax(states @ self.params["O"].T + self.params["ob"])

    def forward(self, src_ids, category: int, b: int) -> np.ndarray:
        """Distribution over the target vocabulary for affiliated position ``b``."""
        return np.exp(self.log_probs(src_ids, category)[b])

    def precompute(self, src_ids, category: int, cand_ids) -> np.ndarray:
        """Log-probabilities of candidate target ids at every source position: (len(cand_ids), J)."""
        cand_ids = np.asarray(cand_ids, dtype=np.int64)
        if cand_ids.size == 0:
            return np.zeros((0, len(src_ids)))
        return self.log_probs(src_ids, category)[:, cand_ids].T

    # ------------------------------------------------------------------
    # loss

    def batch_loss(self, S, cats, rows, pos, targets, cand_ids=None):
        """Mean cross-entropy and gradients for one same-length batch.

        ``rows``/``pos``/``targets`` list every (sentence, affiliated position,
        target id) triple.  ``cand_ids`` restricts the softmax to a sampled
        subset that contains all targets; ``None`` means the full vocabulary.
        """
        p = self.params
        states, cache = self.encode(S, cats)
        tpos = pos + self.shift
        G = states[tpos, rows]  # (N, 2H)
        N = len(targets)
        if cand_ids is None:
            O, ob = p["O"], p["ob"]
            tgt_local = targets
        else:
            O, ob = p["O"][cand_ids], p["ob"][cand_ids]
            lookup = {int(w): k for k, w in enumerate(cand_ids)}
            tgt_local = np.array([lookup[int(t)] for t in targets])
        logits = G @ O.T + ob
        lp = log_softmax(logits)
        loss = -lp[np.arange(N), tgt_local].sum() / N
        dlogits = np.exp(lp)
        dlogits[np.arange(N), tgt_local] -= 1.0
        dlogits /= N
        grads = {}
        dO = dlogits.T @ G
        dob = dlogits.sum(axis=0)
        if cand_ids is None:
            grads["O"], grads["ob"] = dO, dob
        else:
            grads["O"] = np.zeros_like(p["O"])
            grads["ob"] = np.zeros_like(p["ob"])
            grads["O"][cand_ids] = dO
            grads["ob"][cand_ids] = dob
        dG = dlogits @ O
        dstates = np.zeros_like(states)
        np.add.at(dstates, (tpos, rows), dG)
        self._encode_backward(dstates, S, cats, cache, grads)
        return loss, grads

    def save(self, path) -> None:
        save_params(path, asdict(self.config), self.params)

    @classmethod
    def load(cls, path) -> "Btm":
        cfg, params = load_params(path)
        return cls(BtmConfig(**cfg), params)


# ---------------------------------------------------------------------------
# data and training


def sample_candidates(rng, targets, vocab_size: int, sample_size: int) -> np.ndarray | None:
    """Batch targets plus uniformly drawn distinct negatives; None when that covers the vocabulary."""
    tset = np.unique(targets)
    n_neg = vocab_size - len(tset)
    if sample_size >= n_neg:
        return None
    mask = np.ones(vocab_size, dtype=bool)
    mask[tset] = False
    pool = np.flatnonzero(mask)
    neg = rng.choice(pool, size=sample_size, replace=False)
    return np.sort(np.concatenate([tset, neg]))


def make_batches(sentences, batch_size: int, rng=None):
    """Group ``(src_ids, category, affiliations, tgt_ids)`` tuples into same-length batches."""
    buckets = defaultdict(list)
    for k, (src, _, _, tgt) in enumerate(sentences):
        if len(tgt):
            buckets[len(src)].append(k)
    batches = []
    for J in sorted(buckets):
        ids = buckets[J]
        if rng is not None:
            ids = list(rng.permutation(ids))
        for s in range(0, len(ids), batch_size):
            batches.append(ids[s:s + batch_size])
    if rng is not None:
        batches = [batches[k] for k in rng.permutation(len(batches))]
    return batches


def _batch_arrays(sentences, ids):
    S = np.array([sentences[k][0] for k in ids], dtype=np.int64)
    cats = np.array([sentences[k][1] for k in ids], dtype=np.int64)
    rows, pos, tg = [], [], []
    for r, k in enumerate(ids):
        aff, tgt = sentences[k][2], sentences[k][3]
        rows.extend([r] * len(tgt))
        pos.extend(aff)
        tg.extend(tgt)
    return S, cats, np.array(rows, dtype=np.int64), np.array(pos, dtype=np.int64), np.array(tg, dtype=np.int64)


def train_btm(model: Btm, sentences, epochs: int | None = None, seed: int | None = None) -> list:
    """Train in place with sampled-softmax cross-entropy; returns per-epoch training loss."""
    c = model.config
    epochs = c.epochs if epochs is None else epochs
    rng = np.random.default_rng(c.seed if seed is None else seed)
    opt = make_optimizer(c.optimizer, c.lr)
    trace = []
    for ep in range(epochs):
        total, count = 0.0, 0
        for ids in make_batches(sentences, c.batch_size, rng):
            S, cats, rows, pos, tg = _batch_arrays(sentences, ids)
            cands = sample_candidates(rng, tg, c.tgt_vocab_size, c.sample_size)
            loss, grads = model.batch_loss(S, cats, rows, pos, tg, cands)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"BTM loss became {loss} in epoch {ep + 1}")
            opt.step(model.params, grads)
            total += loss * len(tg)
            count += len(tg)
        trace.append(total / max(count, 1))
        log.info("btm epoch %d loss %.4f lr %.5g", ep + 1, trace[-1], opt.lr)
        opt.lr *= c.lr_decay
    return trace


def btm_perplexity(model: Btm, sentences, batch_size: int = 64) -> float:
    """exp of mean full-softmax cross-entropy over every (position, target) example."""
    total, count = 0.0, 0
    for ids in make_batches(sentences, batch_size):
        S, cats, rows, pos, tg = _batch_arrays(sentences, ids)
        states, _ = model.encode(S, cats)
        G = states[pos + model.shift, rows]
        lp = log_softmax(G @ model.params["O"].T + model.params["ob"])
        total -= lp[np.arange(len(tg)), tg].sum()
        count += len(tg)
    return math.exp(total / count)
