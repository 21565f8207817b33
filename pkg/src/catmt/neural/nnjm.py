"""Feed-forward joint lexical model over a source window, trained with NCE.

The model scores target word ``e`` for the source window centred on the
affiliated source position ``b``::

    h        = relu(W [E(f_{b-w/2}); ...; E(f_{b+w/2})] + b_h + category term)
    logit(e) = U[e] . h + u[e]  (+ Uc[e, category] in hidden-append mode)

Logits are used directly as log probabilities; NCE training makes them
approximately self-normalized.  Target history is not part of the input.

Category modes:

``none``
    no category input.
``onehot-concat``
    one-hot category appended to the input layer (columns ``Wc``).
``embedding``
    learned category embedding appended to the input layer.
``hidden-append``
    one-hot category appended to the hidden layer (output columns ``Uc``).

The category term is added after the word term so that zeroed category
weights reproduce the ``none`` model bit for bit.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from ..corpusio import Vocabulary
from .common import TrainingDiverged, glorot, load_params, log_sigmoid, logsumexp, make_optimizer, save_params, sigmoid

log = logging.getLogger(__name__)

CAT_MODES = ("none", "onehot-concat", "embedding", "hidden-append")


@dataclass
class NnjmConfig:
    src_vocab_size: int
    tgt_vocab_size: int
    n_categories: int = 6
    d_in: int = 32
    d_out: int = 64
    window: int = 4
    cat_mode: str = "onehot-concat"
    d_cat: int = 8
    noise_k: int = 10
    noise_power: float = 0.75
    lr: float = 0.05
    optimizer: str = "sgd"
    epochs: int = 10
    batch_size: int = 64
    seed: int = 1

    @property
    def positions(self) -> int:
        return self.window + 1

    def validate(self):
        if self.cat_mode not in CAT_MODES:
            raise ValueError(f"unknown NNJM category mode {self.cat_mode!r}")
        if self.window % 2:
            raise ValueError("window must be even (w/2 words on each side)")
        if self.noise_k < 1:
            raise ValueError("noise_k must be >= 1")


class Nnjm:
    def __init__(self, config: NnjmConfig, params: dict | None = None):
        config.validate()
        self.config = config
        self.params = params if params is not None else self._init_params(np.random.default_rng(config.seed))

    def _init_params(self, rng) -> dict:
        c = self.config
        P = c.positions
        p = {
            "E": rng.normal(0.0, 0.1, size=(c.src_vocab_size, c.d_in)),
            "W": glorot(rng, (c.d_out, P * c.d_in)),
            "b": np.zeros(c.d_out),
            "U": rng.normal(0.0, 0.01, size=(c.tgt_vocab_size, c.d_out)),
            "u": np.full(c.tgt_vocab_size, -np.log(c.tgt_vocab_size)),
        }
        if c.cat_mode == "onehot-concat":
            p["Wc"] = glorot(rng, (c.d_out, c.n_categories))
        elif c.cat_mode == "embedding":
            p["Ec"] = rng.normal(0.0, 0.1, size=(c.n_categories, c.d_cat))
            p["Wc"] = glorot(rng, (c.d_out, c.d_cat))
        elif c.cat_mode == "hidden-append":
            p["Uc"] = rng.normal(0.0, 0.01, size=(c.tgt_vocab_size, c.n_categories))
        return p

    # ------------------------------------------------------------------
    # forward

    def windows(self, src_ids, positions) -> np.ndarray:
        """Window index matrix (len(positions), w+1), padded with <s> / </s>."""
        half = self.config.window // 2
        src_ids = np.asarray(src_ids)
        J = len(src_ids)
        offs = np.arange(-half, half + 1)
        pos = np.asarray(positions)[:, None] + offs[None, :]
        padded = np.concatenate([[Vocabulary.bos_id] * half, src_ids, [Vocabulary.eos_id] * half]).astype(np.int64)
        return padded[np.clip(pos + half, 0, J + 2 * half - 1)]

    def _category_term(self, cats):
        p, mode = self.params, self.config.cat_mode
        if mode == "onehot-concat":
            return p["Wc"][:, cats].T
        if mode == "embedding":
            return p["Ec"][cats] @ p["Wc"].T
        return None

    def hidden(self, X, cats):
        """Pre-activation and hidden layer for window matrix X (B, w+1)."""
        p = self.params
        B = X.shape[0]
        x = p["E"][X].reshape(B, -1)
        pre = x @ p["W"].T + p["b"]
        ct = self._category_term(cats)
        if ct is not None:
            pre = pre + ct
        return x, pre, np.maximum(pre, 0.0)

    def logits(self, h, cats, cands=None):
        """Logits for candidate ids: ``cands`` is None (all words), 1-D (shared) or 2-D (per row)."""
        p = self.params
        hid_app = self.config.cat_mode == "hidden-append"
        if cands is None:
            out = h @ p["U"].T + p["u"]
            if hid_app:
                out = out + p["Uc"][:, cats].T
            return out
        cands = np.asarray(cands)
        if cands.ndim == 1:
            out = h @ p["U"][cands].T + p["u"][cands]
            if hid_app:
                out = out + p["Uc"][np.ix_(cands, np.atleast_1d(cats))].T
            return out
        out = np.einsum("bkd,bd->bk", p["U"][cands], h) + p["u"][cands]
        if hid_app:
            out = out + p["Uc"][cands, np.asarray(cats)[:, None]]
        return out

    def forward(self, X, cats, cands=None):
        X = np.atleast_2d(np.asarray(X, dtype=np.int64))
        cats = np.broadcast_to(np.asarray(cats, dtype=np.int64), (X.shape[0],))
        _, _, h = self.hidden(X, cats)
        return self.logits(h, cats, cands)

    def log_normalizer(self, X, cats) -> np.ndarray:
        """log sum_e exp(logit(e)) over the full target vocabulary."""
        return logsumexp(self.forward(X, cats), axis=-1)

    # ------------------------------------------------------------------
    # precomputation

    def precompute_tables(self) -> np.ndarray:
        """Hidden-layer contribution of every word at every window position: (w+1, V_src, d_out)."""
        c, p = self.config, self.params
        W = p["W"].reshape(c.d_out, c.positions, c.d_in)
        return np.einsum("vd,hpd->pvh", p["E"], W)

    def precomputed_scorer(self, tables: np.ndarray | None = None) -> "NnjmPrecomputed":
        return NnjmPrecomputed(self, self.precompute_tables() if tables is None else tables)

    # ------------------------------------------------------------------
    # NCE

    def nce_loss(self, X, cats, targets, noise, log_kq):
        """Mean NCE loss and gradients.

        ``noise`` (B, k) holds sampled noise ids; ``log_kq`` is log(k q(w)) over the
        target vocabulary.
        """
        p, c = self.params, self.config
        B = X.shape[0]
        x, pre, h = self.hidden(X, cats)
        cands = np.concatenate([targets[:, None], noise], axis=1)  # (B, k+1)
        s = self.logits(h, cats, cands)
        delta = s - log_kq[cands]
        sign = np.ones_like(delta)
        sign[:, 0] = 1.0
        sign[:, 1:] = -1.0
        loss = -np.sum(log_sigmoid(sign * delta)) / B
        # d loss / d s: target sigma(delta)-1, noise sigma(delta)
        ds = sigmoid(delta)
        ds[:, 0] -= 1.0
        ds /= B
        grads = {}
        Uc = p["U"][cands]  # (B, k+1, d)
        dU = np.zeros_like(p["U"])
        np.add.at(dU, cands.reshape(-1), (ds[:, :, None] * h[:, None, :]).reshape(-1, h.shape[1]))
        du = np.zeros_like(p["u"])
        np.add.at(du, cands.reshape(-1), ds.reshape(-1))
        grads["U"], grads["u"] = dU, du
        if c.cat_mode == "hidden-append":
            dUc = np.zeros_like(p["Uc"])
            np.add.at(dUc, (cands, np.broadcast_to(cats[:, None], cands.shape)), ds)
            grads["Uc"] = dUc
        dh = np.einsum("bk,bkd->bd", ds, Uc)
        dpre = dh * (pre > 0)
        grads["W"] = dpre.T @ x
        grads["b"] = dpre.sum(axis=0)
        dx = dpre @ p["W"]
        dE = np.zeros_like(p["E"])
        np.add.at(dE, X.reshape(-1), dx.reshape(-1, c.d_in))
        grads["E"] = dE
        if c.cat_mode == "onehot-concat":
            dWc = np.zeros_like(p["Wc"])
            np.add.at(dWc.T, cats, dpre)
            grads["Wc"] = dWc
        elif c.cat_mode == "embedding":
            emb = p["Ec"][cats]
            grads["Wc"] = dpre.T @ emb
            dEc = np.zeros_like(p["Ec"])
            np.add.at(dEc, cats, dpre @ p["Wc"])
            grads["Ec"] = dEc
        return loss, grads

    def nce_posterior(self, X, cats, targets, log_kq) -> np.ndarray:
        """P(data | context, target) under the NCE classifier."""
        s = self.forward(X, cats, np.asarray(targets)[:, None]).reshape(-1)
        return sigmoid(s - log_kq[targets])

    # ------------------------------------------------------------------
    # persistence

    def save(self, path) -> None:
        save_params(path, asdict(self.config), self.params)

    @classmethod
    def load(cls, path) -> "Nnjm":
        cfg, params = load_params(path)
        return cls(NnjmConfig(**cfg), params)


class NnjmPrecomputed:
    """Window scoring by table lookup; the category contribution is computed once per sentence."""

    def __init__(self, model: Nnjm, tables: np.ndarray):
        self.model = model
        self.tables = tables

    def hidden(self, X, category: int):
        m = self.model
        X = np.atleast_2d(X)
        P = X.shape[1]
        pre = self.tables[0][X[:, 0]]
        for q in range(1, P):
            pre = pre + self.tables[q][X[:, q]]
        pre = pre + m.params["b"]
        ct = m._category_term(np.array([category]))
        if ct is not None:
            pre = pre + ct[0]
        return np.maximum(pre, 0.0)

    def score_matrix(self, src_ids, category: int, cand_ids) -> np.ndarray:
        """Logits for each candidate at each source position: (len(cand_ids), J)."""
        J = len(src_ids)
        X = self.model.windows(src_ids, np.arange(J))
        h = self.hidden(X, category)
        cats = np.full(J, category)
        return self.model.logits(h, cats, np.asarray(cand_ids, dtype=np.int64)).T


def noise_distribution(target_ids, vocab_size: int, power: float = 0.75) -> np.ndarray:
    """Add-one smoothed unigram distribution raised to ``power``; strictly positive."""
    counts = np.bincount(np.asarray(target_ids, dtype=np.int64), minlength=vocab_size).astype(float) + 1.0
    q = counts ** power
    return q / q.sum()


def make_examples(model_or_config, records_ids):
    """Stack (windows, categories, targets) from ``(src_ids, category, affiliations, tgt_ids)`` tuples."""
    cfg = model_or_config.config if isinstance(model_or_config, Nnjm) else model_or_config
    helper = model_or_config if isinstance(model_or_config, Nnjm) else Nnjm(cfg, params={})
    Xs, cs, ys = [], [], []
    for src_ids, cat, aff, tgt_ids in records_ids:
        if not len(tgt_ids):
            continue
        Xs.append(helper.windows(src_ids, aff))
        cs.append(np.full(len(tgt_ids), cat))
        ys.append(np.asarray(tgt_ids))
    if not Xs:
        P = cfg.positions
        return np.zeros((0, P), dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return (np.concatenate(Xs).astype(np.int64), np.concatenate(cs).astype(np.int64),
            np.concatenate(ys).astype(np.int64))


def train_nce(model: Nnjm, X, cats, targets, noise_q: np.ndarray | None = None,
              epochs: int | None = None, lr: float | None = None, seed: int | None = None) -> list:
    """Minibatch NCE training in place; returns the per-epoch mean loss trace."""
    c = model.config
    epochs = c.epochs if epochs is None else epochs
    lr = c.lr if lr is None else lr
    rng = np.random.default_rng(c.seed if seed is None else seed)
    if noise_q is None:
        noise_q = noise_distribution(targets, c.tgt_vocab_size, c.noise_power)
    if np.any(noise_q <= 0):
        raise ValueError("noise distribution must be strictly positive")
    log_kq = np.log(c.noise_k * noise_q)
    opt = make_optimizer(c.optimizer, lr)
    N = len(targets)
    trace = []
    for ep in range(epochs):
        order = rng.permutation(N)
        total = 0.0
        for start in range(0, N, c.batch_size):
            idx = order[start:start + c.batch_size]
            noise = rng.choice(c.tgt_vocab_size, size=(len(idx), c.noise_k), p=noise_q)
            loss, grads = model.nce_loss(X[idx], cats[idx], targets[idx], noise, log_kq)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"NNJM NCE loss became {loss} in epoch {ep + 1} at example {start}")
            opt.step(model.params, grads)
            total += loss * len(idx)
        trace.append(total / max(N, 1))
        log.info("nnjm epoch %d nce loss %.4f", ep + 1, trace[-1])
    return trace
