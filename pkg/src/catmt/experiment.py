"""Pipeline stages and the system-comparison experiment runner."""

from __future__ import annotations

import json
import logging
import math
import multiprocessing as mp
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .align import affiliate, align_corpus, write_alignments
from .classify import accuracy, train_classifier
from .corpusio import (CategorySet, CorpusFormatError, ParallelRecord, PreprocessConfig, SenseTable, Vocabulary,
                       build_vocabulary, polysemy_accuracy, preprocess_record, read_corpus, read_keyvalue)
from .decoder import DEFAULT_WEIGHTS, DecoderConfig, Models, NeuralFeature, decode_nbest, write_weights
from .decoder.model import CORE_FEATURES
from .evaluation import (approx_randomization_stats, bleu_from_stats, corpus_bleu_stats, corpus_ter_stats,
                         rate_from_stats, stars)
from .neural.btm import Btm, BtmConfig, btm_perplexity, train_btm
from .neural.nnjm import Nnjm, NnjmConfig, make_examples, train_nce
from .ngramlm import train_kn, write_arpa
from .phrasetable import (build_phrase_table, build_sparse_inventory, phrase_instances, train_category_lexicon)
from .tuning import tune_loop, write_trace

log = logging.getLogger(__name__)

PRESET_DIR = Path(__file__).parent / "presets"


# ---------------------------------------------------------------------------
# configuration


@dataclass
class PipelineConfig:
    seed: int = 1
    workers: int = 1
    # alignment and phrase table
    align_iterations: int = 5
    align_heuristic: str = "grow-diag"
    max_phrase_len: int = 7
    lm_order: int = 3
    lm_min_count: int = 1
    catlex_alpha: float = 0.1
    vocab_size: int = 2000
    classifier_alpha: float = 1.0
    # NNJM
    nnjm_d_in: int = 32
    nnjm_d_out: int = 64
    nnjm_window: int = 4
    nnjm_noise_k: int = 10
    nnjm_lr: float = 0.05
    nnjm_optimizer: str = "sgd"
    nnjm_epochs: int = 10
    nnjm_batch_size: int = 64
    # BTM
    btm_d_emb: int = 32
    btm_d_hid: int = 64
    btm_sample_size: int = 512
    btm_lr: float = 0.01
    btm_lr_decay: float = 0.9
    btm_optimizer: str = "adam"
    btm_epochs: int = 6
    btm_batch_size: int = 32
    # decoding and tuning
    beam_size: int = 100
    threshold: float = 1e-4
    distortion_limit: int = 6
    table_limit: int = 20
    nbest: int = 100
    catvec_eps: float = 1e-4
    tune_iterations: int = 3
    mert_random_directions: int = 5
    mira_c: float = 0.01
    mira_epochs: int = 15
    ar_samples: int = 10000

    @classmethod
    def read(cls, path) -> "PipelineConfig":
        return cls.from_dict(read_keyvalue(path), path)

    @classmethod
    def preset(cls, name: str) -> "PipelineConfig":
        return cls.read(PRESET_DIR / f"{name}.cfg")

    @classmethod
    def from_dict(cls, kv: dict, path=None) -> "PipelineConfig":
        types = {fl.name: type(fl.default) for fl in fields(cls)}
        out = {}
        for k, v in kv.items():
            if k not in types:
                raise CorpusFormatError(f"unknown pipeline option {k!r}", path)
            try:
                out[k] = types[k](v)
            except ValueError:
                raise CorpusFormatError(f"bad value for {k}: {v!r}", path) from None
        return cls(**out)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for fl in fields(self):
                f.write(f"{fl.name}={getattr(self, fl.name)}\n")

    def decoder_config(self, features=()) -> DecoderConfig:
        toggles = {f: True for f in features}
        return DecoderConfig(beam_size=self.beam_size, threshold=self.threshold,
                             distortion_limit=self.distortion_limit, nbest=self.nbest,
                             table_limit=self.table_limit, catvec_eps=self.catvec_eps, **toggles)

    def nnjm_config(self, V_src: int, V_tgt: int, C: int, mode: str) -> NnjmConfig:
        return NnjmConfig(V_src, V_tgt, n_categories=C, d_in=self.nnjm_d_in, d_out=self.nnjm_d_out,
                          window=self.nnjm_window, cat_mode=mode, noise_k=self.nnjm_noise_k, lr=self.nnjm_lr,
                          optimizer=self.nnjm_optimizer, epochs=self.nnjm_epochs,
                          batch_size=self.nnjm_batch_size, seed=self.seed)

    def btm_config(self, V_src: int, V_tgt: int, C: int, mode: str) -> BtmConfig:
        return BtmConfig(V_src, V_tgt, n_categories=C, d_emb=self.btm_d_emb, d_hid=self.btm_d_hid, cat_mode=mode,
                         sample_size=self.btm_sample_size, lr=self.btm_lr, lr_decay=self.btm_lr_decay,
                         optimizer=self.btm_optimizer, epochs=self.btm_epochs, batch_size=self.btm_batch_size,
                         seed=self.seed)


FEATURE_TOGGLES = ("wp", "cwp", "catvec", "catlex", "nnjm", "btm")


@dataclass
class SystemRow:
    name: str
    features: tuple = ()
    optimizer: str = "mert"
    nnjm_mode: str = "onehot-concat"
    btm_mode: str = "onehot-concat"

    def validate(self):
        bad = set(self.features) - set(FEATURE_TOGGLES)
        if bad:
            raise ValueError(f"row {self.name}: unknown features {sorted(bad)}")
        if self.optimizer not in ("mert", "mira"):
            raise ValueError(f"row {self.name}: unknown optimizer {self.optimizer!r}")


DEFAULT_ROWS = (
    SystemRow("baseline"),
    SystemRow("+SF", ("wp",), "mira"),
    SystemRow("+Category SF", ("wp", "cwp"), "mira"),
    SystemRow("+Mathur-style", ("catvec",)),
    SystemRow("+NNJM", ("nnjm",), nnjm_mode="none"),
    SystemRow("+NNJM(cat)", ("nnjm",), nnjm_mode="onehot-concat"),
    SystemRow("+BTM", ("btm",), btm_mode="none"),
    SystemRow("+BTM(cat)", ("btm",), btm_mode="onehot-concat"),
    SystemRow("+generative lexicon", ("catlex",)),
)


@dataclass
class ExperimentPlan:
    rows: list
    data_dir: str
    out_dir: str
    config: PipelineConfig = field(default_factory=PipelineConfig)
    baseline: str = "baseline"

    def validate(self):
        names = [r.name for r in self.rows]
        if len(set(names)) != len(names):
            raise ValueError("system row names must be unique")
        if self.baseline not in names:
            raise ValueError(f"baseline row {self.baseline!r} missing from plan")
        for r in self.rows:
            r.validate()

    @classmethod
    def read(cls, path) -> "ExperimentPlan":
        """JSON: ``{"data": dir, "out": dir, "config": preset-or-path, "overrides": {...}, "rows": [...]}``."""
        with open(path, encoding="utf-8") as f:
            try:
                obj = json.load(f)
            except json.JSONDecodeError as e:
                raise CorpusFormatError(f"bad plan JSON: {e.msg}", path, e.lineno) from None
        base = Path(path).parent
        cfg_ref = obj.get("config", "desk")
        if (PRESET_DIR / f"{cfg_ref}.cfg").exists():
            cfg = PipelineConfig.preset(cfg_ref)
        else:
            cfg = PipelineConfig.read(base / cfg_ref)
        if obj.get("overrides"):
            kv = {**{fl.name: getattr(cfg, fl.name) for fl in fields(cfg)}, **obj["overrides"]}
            cfg = PipelineConfig.from_dict(kv, path)
        rows = [SystemRow(r["name"], tuple(r.get("features", ())), r.get("optimizer", "mert"),
                          r.get("nnjm_mode", "onehot-concat"), r.get("btm_mode", "onehot-concat"))
                for r in obj.get("rows", [asdict(r) for r in DEFAULT_ROWS])]
        return cls(rows, str(base / obj["data"]), str(base / obj["out"]), cfg, obj.get("baseline", "baseline"))


# ---------------------------------------------------------------------------
# data


@dataclass
class Dataset:
    categories: CategorySet
    train: list
    dev: list
    test: list
    senses: SenseTable | None = None


def load_dataset(data_dir, rules: PreprocessConfig = PreprocessConfig()) -> Dataset:
    d = Path(data_dir)
    cats = CategorySet.read(d / "categories.txt")
    prep = lambda recs: [preprocess_record(r, rules) for r in recs]
    train = prep(read_corpus(d / "train.tsv", cats, "train"))
    dev = prep(read_corpus(d / "dev.tsv", cats, "test"))
    test = prep(read_corpus(d / "test.tsv", cats, "test"))
    senses = SenseTable.read(d / "senses.tsv", cats) if (d / "senses.tsv").exists() else None
    return Dataset(cats, train, dev, test, senses)


# ---------------------------------------------------------------------------
# model training


@dataclass
class TrainedModels:
    n_categories: int
    phrase_table: object
    lm: object
    catlex: object
    sparse: object
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    fwd: object
    bwd: object
    alignments: list
    nnjm: dict = field(default_factory=dict)  # mode -> Nnjm
    btm: dict = field(default_factory=dict)  # mode -> Btm
    nnjm_loss: dict = field(default_factory=dict)
    btm_loss: dict = field(default_factory=dict)

    def decoder_models(self, row: SystemRow) -> Models:
        feats = set(row.features)
        nn = bt = None
        if "nnjm" in feats:
            nn = NeuralFeature("nnjm", self.nnjm[row.nnjm_mode], self.src_vocab, self.tgt_vocab)
        if "btm" in feats:
            bt = NeuralFeature("btm", self.btm[row.btm_mode], self.src_vocab, self.tgt_vocab)
        return Models(self.phrase_table, self.lm, self.n_categories, self.catlex, self.sparse, nn, bt)


def neural_examples(records: Sequence[ParallelRecord], alignments, src_vocab: Vocabulary, tgt_vocab: Vocabulary):
    """``(src_ids, category, affiliations, tgt_ids)`` per sentence."""
    out = []
    for rec, a in zip(records, alignments):
        out.append((np.array(src_vocab.encode(rec.source), dtype=np.int64), rec.category,
                    np.array(affiliate(a), dtype=np.int64), np.array(tgt_vocab.encode(rec.target), dtype=np.int64)))
    return out


def train_nnjm_model(cfg: PipelineConfig, sentences, V_src, V_tgt, C, mode):
    model = Nnjm(cfg.nnjm_config(V_src, V_tgt, C, mode))
    X, cats, y = make_examples(model, sentences)
    trace = train_nce(model, X, cats, y)
    return model, trace


def train_btm_model(cfg: PipelineConfig, sentences, V_src, V_tgt, C, mode):
    model = Btm(cfg.btm_config(V_src, V_tgt, C, mode))
    trace = train_btm(model, sentences)
    return model, trace


def train_models(train: Sequence[ParallelRecord], C: int, cfg: PipelineConfig, nnjm_modes=(), btm_modes=(),
                 out_dir: Path | None = None) -> TrainedModels:
    t0 = time.time()
    pairs = [(r.source, r.target) for r in train]
    alignments, fwd, bwd = align_corpus(pairs, cfg.align_iterations, cfg.align_heuristic)
    log.info("aligned %d pairs in %.1fs", len(pairs), time.time() - t0)
    pt = build_phrase_table(phrase_instances(train, alignments, cfg.max_phrase_len), C, fwd, bwd)
    lm = train_kn([r.target for r in train], cfg.lm_order, cfg.lm_min_count)
    catlex = train_category_lexicon([(r.target, r.category) for r in train], C, cfg.catlex_alpha)
    sparse = build_sparse_inventory(train, alignments)
    src_vocab = build_vocabulary([r.source for r in train], cfg.vocab_size)
    tgt_vocab = build_vocabulary([r.target for r in train], cfg.vocab_size)
    log.info("phrase table %d entries, LM, lexicon in %.1fs", len(pt), time.time() - t0)
    tm = TrainedModels(C, pt, lm, catlex, sparse, src_vocab, tgt_vocab, fwd, bwd, alignments)
    sentences = neural_examples(train, alignments, src_vocab, tgt_vocab)
    for mode in nnjm_modes:
        tm.nnjm[mode], tm.nnjm_loss[mode] = train_nnjm_model(cfg, sentences, len(src_vocab), len(tgt_vocab), C, mode)
        log.info("nnjm[%s] trained, t=%.1fs", mode, time.time() - t0)
    for mode in btm_modes:
        tm.btm[mode], tm.btm_loss[mode] = train_btm_model(cfg, sentences, len(src_vocab), len(tgt_vocab), C, mode)
        log.info("btm[%s] trained, t=%.1fs", mode, time.time() - t0)
    if out_dir is not None:
        save_models(tm, out_dir)
    return tm


def save_models(tm: TrainedModels, out_dir) -> None:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    tm.phrase_table.write(d / "phrases.tsv")
    write_arpa(tm.lm, d / "lm.arpa")
    tm.catlex.write(d / "catlex.tsv")
    tm.sparse.write(d / "sparse.tsv")
    tm.src_vocab.write(d / "src.vocab")
    tm.tgt_vocab.write(d / "tgt.vocab")
    write_alignments(tm.alignments, d / "train.align")
    for mode, m in tm.nnjm.items():
        m.save(d / f"nnjm.{mode}.params")
    for mode, m in tm.btm.items():
        m.save(d / f"btm.{mode}.params")


# ---------------------------------------------------------------------------
# decoding


_WORKER_STATE = {}


def _decode_one(args):
    k, n = args
    src, cat = _WORKER_STATE["inputs"][k]
    return decode_nbest(src, cat, _WORKER_STATE["models"], _WORKER_STATE["weights"], _WORKER_STATE["config"], n)


def decode_corpus(records: Sequence[ParallelRecord], models: Models, weights: dict, config: DecoderConfig,
                  n: int = 1, workers: int = 1) -> list:
    """One derivation list per record (length ``n`` at most).

    With ``workers > 1`` sentences are farmed out to forked processes; the
    result is identical to the sequential run since sentences are independent.
    """
    inputs = [(r.source, r.category) for r in records]
    if workers <= 1 or len(inputs) < 2 or "fork" not in mp.get_all_start_methods():
        return [decode_nbest(s, c, models, weights, config, n) for s, c in inputs]
    _WORKER_STATE.update(inputs=inputs, models=models, weights=weights, config=config)
    try:
        with mp.get_context("fork").Pool(workers) as pool:
            return pool.map(_decode_one, [(k, n) for k in range(len(inputs))], chunksize=8)
    finally:
        _WORKER_STATE.clear()


def initial_weights(row: SystemRow) -> dict:
    active = CORE_FEATURES + tuple(f for f in ("catvec", "catlex", "nnjm", "btm") if f in row.features)
    return {f: DEFAULT_WEIGHTS[f] for f in active}


def tune_system(row: SystemRow, tm: TrainedModels, dev: Sequence[ParallelRecord], cfg: PipelineConfig):
    models = tm.decoder_models(row)
    dcfg = cfg.decoder_config(row.features)
    refs = [r.references for r in dev]

    def dec(w):
        return decode_corpus(dev, models, w, dcfg, cfg.nbest, cfg.workers)

    if row.optimizer == "mert":
        kw = dict(n_random=cfg.mert_random_directions, seed=cfg.seed)
    else:
        kw = dict(C=cfg.mira_c, epochs=cfg.mira_epochs, seed=cfg.seed)
    return tune_loop(dec, refs, initial_weights(row), row.optimizer, cfg.tune_iterations, kw)


# ---------------------------------------------------------------------------
# experiment


@dataclass
class SystemResult:
    name: str
    weights: dict
    hyps: list
    bleu_stats: np.ndarray
    ter_stats: np.ndarray
    polysemy: float
    dev_trace: list
    p_bleu: float = 1.0

    @property
    def bleu(self) -> float:
        return float(bleu_from_stats(self.bleu_stats.sum(0)))

    @property
    def ter(self) -> float:
        return float(rate_from_stats(self.ter_stats.sum(0)))


@dataclass
class ExperimentResult:
    systems: list
    categories: CategorySet
    test_categories: list
    baseline: str
    diagnostics: dict
    report: str = ""
    trained: TrainedModels | None = None

    def system(self, name: str) -> SystemResult:
        for s in self.systems:
            if s.name == name:
                return s
        raise KeyError(name)


def held_out_diagnostics(tm: TrainedModels, test: Sequence[ParallelRecord], n_contexts: int = 200,
                         seed: int = 1) -> dict:
    """BTM held-out perplexities and the NNJM self-normalization gap."""
    pairs = [(r.source, r.target) for r in test]
    aligns, _, _ = align_corpus(pairs, fwd=tm.fwd, bwd=tm.bwd)
    sents = neural_examples(test, aligns, tm.src_vocab, tm.tgt_vocab)
    out = {}
    for mode, m in sorted(tm.btm.items()):
        out[f"btm_ppl[{mode}]"] = btm_perplexity(m, sents)
    rng = np.random.default_rng(seed)
    for mode, m in sorted(tm.nnjm.items()):
        X, cats, _ = make_examples(m, sents)
        idx = rng.choice(len(X), size=min(n_contexts, len(X)), replace=False)
        out[f"nnjm_norm_gap[{mode}]"] = float(np.mean(np.abs(m.log_normalizer(X[idx], cats[idx]))))
    return out


def _fmt(x: float) -> str:
    return "nan" if isinstance(x, float) and math.isnan(x) else f"{x:.2f}"


def format_report(result: ExperimentResult) -> str:
    cats = result.categories
    C = len(cats)
    test_cats = np.array(result.test_categories)
    head = ["System", "BLEU", "TER", "Poly.acc"]
    for c in range(C):
        head += [f"{cats.label_of(c)} BLEU", f"{cats.label_of(c)} TER"]
    lines = ["# Category-aware translation: system comparison", "",
             "BLEU/TER on the test set (case-insensitive). Stars mark approximate-randomization "
             f"significance of the BLEU difference to `{result.baseline}`: * p < 0.05, ** p < 0.01.", "",
             "| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for s in result.systems:
        mark = "" if s.name == result.baseline else stars(s.p_bleu)
        cells = [s.name, f"{s.bleu:.2f}{mark}", f"{s.ter:.2f}", f"{100 * s.polysemy:.1f}" if not math.isnan(
            s.polysemy) else "n/a"]
        for c in range(C):
            m = test_cats == c
            if m.any():
                cells += [f"{float(bleu_from_stats(s.bleu_stats[m].sum(0))):.2f}",
                          f"{float(rate_from_stats(s.ter_stats[m].sum(0))):.2f}"]
            else:
                cells += ["n/a", "n/a"]
        lines.append("| " + " | ".join(cells) + " |")
    lines += ["", "## p-values (BLEU vs baseline)", ""]
    for s in result.systems:
        if s.name != result.baseline:
            lines.append(f"- {s.name}: p = {s.p_bleu:.4f}")
    lines += ["", "## Diagnostics", ""]
    for k in sorted(result.diagnostics):
        v = result.diagnostics[k]
        lines.append(f"- {k}: {v:.4f}" if isinstance(v, float) else f"- {k}: {v}")
    lines += ["", "## Dev BLEU traces", ""]
    for s in result.systems:
        lines.append(f"- {s.name}: " + " ".join(f"{b:.2f}" for _, b in s.dev_trace))
    return "\n".join(lines) + "\n"


def run_experiment(plan: ExperimentPlan, dataset: Dataset | None = None, write: bool = True) -> ExperimentResult:
    plan.validate()
    cfg = plan.config
    out = Path(plan.out_dir)
    if write:
        out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    data = dataset or load_dataset(plan.data_dir)
    C = len(data.categories)
    nnjm_modes = sorted({r.nnjm_mode for r in plan.rows if "nnjm" in r.features})
    btm_modes = sorted({r.btm_mode for r in plan.rows if "btm" in r.features})
    tm = train_models(data.train, C, cfg, nnjm_modes, btm_modes, out / "models" if write else None)
    diagnostics = held_out_diagnostics(tm, data.test, seed=cfg.seed)
    clf = train_classifier([(r.source, r.category) for r in data.train], C, cfg.classifier_alpha)
    diagnostics["classifier_test_accuracy"] = accuracy(clf, data.test)
    log.info("models ready after %.1fs", time.time() - t0)

    refs = [r.references for r in data.test]
    results = []
    for row in plan.rows:
        try:
            tuned = tune_system(row, tm, data.dev, cfg)
            models = tm.decoder_models(row)
            dcfg = cfg.decoder_config(row.features)
            hyps = [lst[0].tokens for lst in decode_corpus(data.test, models, tuned.weights, dcfg, 1, cfg.workers)]
        except Exception as e:  # report which row failed, keep the traceback
            raise RuntimeError(f"system row {row.name!r} failed: {e}") from e
        poly = polysemy_accuracy(hyps, data.test, data.senses) if data.senses is not None else float("nan")
        res = SystemResult(row.name, tuned.weights, hyps, corpus_bleu_stats(hyps, refs),
                           corpus_ter_stats(hyps, refs), poly, tuned.trace)
        results.append(res)
        log.info("%s: test BLEU %.2f TER %.2f poly %.3f (t=%.1fs)", row.name, res.bleu, res.ter, poly,
                 time.time() - t0)
        if write:
            slug = row.name.replace(" ", "_").replace("+", "plus_").replace("(", "_").replace(")", "")
            sysdir = out / "systems" / slug
            sysdir.mkdir(parents=True, exist_ok=True)
            write_weights(tuned.weights, sysdir / "weights.txt")
            write_trace(tuned, sysdir / "trace.txt")
            with open(sysdir / "test.hyp", "w", encoding="utf-8", newline="\n") as f:
                for h in hyps:
                    f.write(" ".join(h) + "\n")
    base = next(s for s in results if s.name == plan.baseline)
    for s in results:
        if s is not base:
            s.p_bleu = approx_randomization_stats(s.bleu_stats, base.bleu_stats, bleu_from_stats,
                                                  cfg.ar_samples, cfg.seed)
    result = ExperimentResult(results, data.categories, [r.category for r in data.test], plan.baseline, diagnostics,
                              trained=tm)
    result.report = format_report(result)
    if write:
        with open(out / "report.md", "w", encoding="utf-8", newline="\n") as f:
            f.write(result.report)
    log.info("experiment finished in %.1fs", time.time() - t0)
    return result
