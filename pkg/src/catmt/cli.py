"""Command-line entry point: ``catmt <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error (with file and line when known).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import align as align_mod
from . import classify as classify_mod
from .corpusio import (CategorySet, CorpusFormatError, GeneratorSpec, PreprocessConfig, SenseTable, Vocabulary,
                       build_vocabulary, generate_synthetic, polysemy_accuracy, preprocess_record, read_corpus,
                       write_corpus, write_synthetic)
from .decoder import DecoderConfig, Models, NeuralFeature, read_weights, write_nbest, write_weights
from .evaluation import score_report
from .neural.btm import Btm
from .neural.common import TrainingDiverged
from .neural.nnjm import Nnjm
from .ngramlm import read_arpa, train_kn, write_arpa
from .phrasetable import (CategoryLexicon, PhraseTable, SparseInventory, build_phrase_table, build_sparse_inventory,
                          phrase_instances, train_category_lexicon)

log = logging.getLogger("catmt")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers


def _config(args):
    from .experiment import PipelineConfig
    if args.config in ("desk", "paper"):
        cfg = PipelineConfig.preset(args.config)
    else:
        cfg = PipelineConfig.read(args.config)
    cfg.seed = args.seed if args.seed is not None else cfg.seed
    cfg.workers = args.workers if args.workers is not None else cfg.workers
    return cfg


def _cats(args) -> CategorySet:
    return CategorySet.read(args.categories)


def _read_lines(path) -> list:
    with open(path, encoding="utf-8") as f:
        return [tuple(line.split()) for line in f.read().splitlines()]


def _write_lines(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for r in rows:
            f.write(" ".join(r) + "\n")


def _pairs(records):
    return [(r.source, r.target) for r in records]


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args):
    spec = GeneratorSpec.read(args.spec) if args.spec else GeneratorSpec()
    if args.seed is not None:
        spec.seed = args.seed
    write_synthetic(generate_synthetic(spec), args.out)
    spec.write(Path(args.out) / "spec.cfg")


def cmd_preprocess(args):
    cats = _cats(args)
    rules = PreprocessConfig(lowercase=not args.keep_case, numbers=not args.keep_numbers, specs=not args.keep_specs)
    recs = [preprocess_record(r, rules) for r in read_corpus(args.input, cats, args.format)]
    write_corpus(recs, args.out, cats, args.format)


def cmd_classify_train(args):
    cats = _cats(args)
    recs = read_corpus(args.train, cats, args.format)
    model = classify_mod.train_classifier([(r.source, r.category) for r in recs], len(cats), args.alpha,
                                          labels=cats.labels)
    model.write(args.out)


def cmd_classify_apply(args):
    cats = _cats(args)
    model = classify_mod.ClassifierModel.read(args.model)
    recs = read_corpus(args.input, cats, args.format)
    labeled = classify_mod.label_corpus(model, recs, overwrite=True)
    if args.report_accuracy:
        acc = sum(a.category == b.category for a, b in zip(recs, labeled)) / max(len(recs), 1)
        print(f"accuracy\t{acc:.4f}")
    write_corpus(labeled, args.out, cats, args.format)


def cmd_align(args):
    cats = _cats(args)
    pairs = _pairs(read_corpus(args.train, cats, "train"))
    alignments, fwd, bwd = align_mod.align_corpus(pairs, args.iterations, args.heuristic)
    align_mod.write_alignments(alignments, args.out)
    if args.ttable_prefix:
        fwd.write(f"{args.ttable_prefix}.fwd")
        bwd.write(f"{args.ttable_prefix}.bwd")


def cmd_lm_train(args):
    cats = _cats(args)
    recs = read_corpus(args.train, cats, "train")
    model = train_kn([r.target for r in recs], args.order, args.min_count)
    write_arpa(model, args.out)


def _ttables(args, pairs):
    if args.ttable_prefix and Path(f"{args.ttable_prefix}.fwd").exists():
        return align_mod.TTable.read(f"{args.ttable_prefix}.fwd"), align_mod.TTable.read(f"{args.ttable_prefix}.bwd")
    fwd = align_mod.train_ibm1(pairs, args.iterations)
    bwd = align_mod.train_ibm1([(t, s) for s, t in pairs], args.iterations)
    return fwd, bwd


def cmd_phrases(args):
    cats = _cats(args)
    recs = read_corpus(args.train, cats, "train")
    pairs = _pairs(recs)
    alignments = align_mod.read_alignments(args.align, pairs)
    fwd, bwd = _ttables(args, pairs)
    table = build_phrase_table(phrase_instances(recs, alignments, args.max_len), len(cats), fwd, bwd)
    table.write(args.out)
    if args.sparse_out:
        build_sparse_inventory(recs, alignments).write(args.sparse_out)


def cmd_catlex(args):
    cats = _cats(args)
    recs = read_corpus(args.train, cats, "train")
    train_category_lexicon([(r.target, r.category) for r in recs], len(cats), args.alpha).write(args.out)


def _neural_data(args, cats):
    from .experiment import neural_examples
    recs = read_corpus(args.train, cats, "train")
    alignments = align_mod.read_alignments(args.align, _pairs(recs))
    src_v = Vocabulary.read(args.src_vocab) if args.src_vocab and Path(args.src_vocab).exists() else None
    tgt_v = Vocabulary.read(args.tgt_vocab) if args.tgt_vocab and Path(args.tgt_vocab).exists() else None
    cfg = _config(args)
    if src_v is None:
        src_v = build_vocabulary([r.source for r in recs], cfg.vocab_size)
        if args.src_vocab:
            src_v.write(args.src_vocab)
    if tgt_v is None:
        tgt_v = build_vocabulary([r.target for r in recs], cfg.vocab_size)
        if args.tgt_vocab:
            tgt_v.write(args.tgt_vocab)
    return cfg, neural_examples(recs, alignments, src_v, tgt_v), src_v, tgt_v


def cmd_nnjm_train(args):
    from .experiment import train_nnjm_model
    cats = _cats(args)
    cfg, sents, sv, tv = _neural_data(args, cats)
    if args.epochs is not None:
        cfg.nnjm_epochs = args.epochs
    model, trace = train_nnjm_model(cfg, sents, len(sv), len(tv), len(cats), args.mode)
    model.save(args.out)
    for ep, loss in enumerate(trace, 1):
        log.info("epoch %d loss %.5f", ep, loss)


def cmd_btm_train(args):
    from .experiment import train_btm_model
    cats = _cats(args)
    cfg, sents, sv, tv = _neural_data(args, cats)
    if args.epochs is not None:
        cfg.btm_epochs = args.epochs
    model, trace = train_btm_model(cfg, sents, len(sv), len(tv), len(cats), args.mode)
    model.save(args.out)
    for ep, loss in enumerate(trace, 1):
        log.info("epoch %d loss %.5f", ep, loss)


def _model_path(args, name, default):
    explicit = getattr(args, name)
    if explicit:
        return Path(explicit)
    if args.model_dir:
        p = Path(args.model_dir) / default
        if p.exists():
            return p
    return None


def _load_models(args, cats, dcfg: DecoderConfig) -> Models:
    phrases = _model_path(args, "phrases", "phrases.tsv")
    lm = _model_path(args, "lm", "lm.arpa")
    if phrases is None or lm is None:
        raise UsageError("a phrase table and an LM are required (--phrases/--lm or --model-dir)")
    models = Models(PhraseTable.read(phrases), read_arpa(lm), len(cats))
    if dcfg.catlex:
        p = _model_path(args, "catlex", "catlex.tsv")
        if p is None:
            raise UsageError("feature catlex needs --catlex")
        models.catlex = CategoryLexicon.read(p)
    if dcfg.wp or dcfg.cwp:
        p = _model_path(args, "sparse", "sparse.tsv")
        if p is None:
            raise UsageError("sparse features need --sparse")
        models.sparse = SparseInventory.read(p)
    if dcfg.nnjm or dcfg.btm:
        sv, tv = _model_path(args, "src_vocab", "src.vocab"), _model_path(args, "tgt_vocab", "tgt.vocab")
        if sv is None or tv is None:
            raise UsageError("neural features need --src-vocab and --tgt-vocab")
        sv, tv = Vocabulary.read(sv), Vocabulary.read(tv)
        if dcfg.nnjm:
            p = _model_path(args, "nnjm", f"nnjm.{args.nnjm_mode}.params")
            if p is None:
                raise UsageError("feature nnjm needs --nnjm")
            models.nnjm = NeuralFeature("nnjm", Nnjm.load(p), sv, tv)
        if dcfg.btm:
            p = _model_path(args, "btm", f"btm.{args.btm_mode}.params")
            if p is None:
                raise UsageError("feature btm needs --btm")
            models.btm = NeuralFeature("btm", Btm.load(p), sv, tv)
    return models


def _decoder_config(args) -> DecoderConfig:
    dcfg = DecoderConfig.read(args.decoder_config) if args.decoder_config else DecoderConfig()
    for f in filter(None, (args.features or "").split(",")):
        if f not in ("wp", "cwp", "catvec", "catlex", "nnjm", "btm"):
            raise UsageError(f"unknown feature {f!r}")
        setattr(dcfg, f, True)
    if args.beam is not None:
        dcfg.beam_size = args.beam
    if args.nbest is not None:
        dcfg.nbest = args.nbest
    return dcfg


def _initial_weights(args, dcfg: DecoderConfig) -> dict:
    from .decoder import DEFAULT_WEIGHTS
    if args.weights:
        return read_weights(args.weights)
    return {f: DEFAULT_WEIGHTS[f] for f in dcfg.dense_features()}


def cmd_decode(args):
    from .experiment import decode_corpus
    cats = _cats(args)
    dcfg = _decoder_config(args)
    models = _load_models(args, cats, dcfg)
    weights = _initial_weights(args, dcfg)
    recs = read_corpus(args.input, cats, "test")
    n = dcfg.nbest if args.nbest_out else 1
    out = decode_corpus(recs, models, weights, dcfg, n, args.workers or 1)
    _write_lines(args.out, [lst[0].tokens for lst in out])
    if args.nbest_out:
        write_nbest(out, args.nbest_out)


def cmd_tune(args):
    from .experiment import decode_corpus
    from .tuning import tune_loop, write_trace
    cats = _cats(args)
    dcfg = _decoder_config(args)
    models = _load_models(args, cats, dcfg)
    dev = read_corpus(args.dev, cats, "test")
    refs = [r.references for r in dev]
    w0 = _initial_weights(args, dcfg)
    seed = args.seed if args.seed is not None else 1
    kw = dict(seed=seed)
    if args.optimizer == "mira":
        kw.update(C=args.mira_c, epochs=args.mira_epochs)
    res = tune_loop(lambda w: decode_corpus(dev, models, w, dcfg, dcfg.nbest, args.workers or 1), refs, w0,
                    args.optimizer, args.iterations, kw)
    write_weights(res.weights, args.out)
    if args.trace:
        write_trace(res, args.trace)


def cmd_score(args):
    cats = _cats(args)
    recs = read_corpus(args.refs, cats, "test")
    hyps = _read_lines(args.hyp)
    if len(hyps) != len(recs):
        raise CorpusFormatError(f"{len(hyps)} hypotheses for {len(recs)} references", args.hyp)
    base = None
    if args.baseline:
        base = _read_lines(args.baseline)
        if len(base) != len(recs):
            raise CorpusFormatError(f"{len(base)} hypotheses for {len(recs)} references", args.baseline)
    report = score_report(hyps, [r.references for r in recs], base, args.samples, args.seed or 1)
    if args.senses:
        acc = polysemy_accuracy(hyps, recs, SenseTable.read(args.senses, cats))
        report += f"polysemy_accuracy\t{acc:.4f}\n"
    sys.stdout.write(report)


def cmd_experiment(args):
    from .experiment import DEFAULT_ROWS, ExperimentPlan, run_experiment
    if args.plan:
        plan = ExperimentPlan.read(args.plan)
        if args.seed is not None:
            plan.config.seed = args.seed
        if args.workers is not None:
            plan.config.workers = args.workers
    else:
        if not (args.data and args.out):
            raise UsageError("either --plan or both --data and --out are required")
        rows = list(DEFAULT_ROWS)
        if args.rows:
            wanted = [r.strip() for r in args.rows.split(",")]
            known = {r.name: r for r in rows}
            missing = [w for w in wanted if w not in known]
            if missing:
                raise UsageError(f"unknown system rows: {missing}")
            rows = [known[w] for w in wanted]
        plan = ExperimentPlan(rows, args.data, args.out, _config(args), rows[0].name)
    result = run_experiment(plan)
    sys.stdout.write(result.report)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed threaded through every stage")
    common.add_argument("--workers", type=int, default=None, help="worker processes for decoding (1 = sequential)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="catmt", description="Category-aware phrase-based translation toolkit.")
    sub = p.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)
    sub.required = True

    def add(name, fn, help):
        sp = sub.add_parser(name, parents=[common], help=help, description=help)
        sp.set_defaults(func=fn)
        return sp

    def categories(sp):
        sp.add_argument("--categories", required=True, help="category sidecar (one label per line)")

    sp = add("generate", cmd_generate, "write a synthetic polysemy corpus")
    sp.add_argument("--spec", help="generator spec (key=value); defaults if omitted")
    sp.add_argument("--out", required=True)

    sp = add("preprocess", cmd_preprocess, "tokenize, lowercase and insert number/spec placeholders")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--format", choices=("train", "test"), default="train")
    sp.add_argument("--keep-case", action="store_true")
    sp.add_argument("--keep-numbers", action="store_true")
    sp.add_argument("--keep-specs", action="store_true")
    categories(sp)

    sp = add("classify-train", cmd_classify_train, "train the category classifier")
    sp.add_argument("--train", required=True)
    sp.add_argument("--format", choices=("train", "test"), default="train")
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.add_argument("--out", required=True)
    categories(sp)

    sp = add("classify-apply", cmd_classify_apply, "relabel a corpus with predicted categories")
    sp.add_argument("--model", required=True)
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--format", choices=("train", "test"), default="train")
    sp.add_argument("--out", required=True)
    sp.add_argument("--report-accuracy", action="store_true", help="print agreement with the input labels")
    categories(sp)

    sp = add("align", cmd_align, "IBM Model 1 in both directions plus symmetrization")
    sp.add_argument("--train", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--iterations", type=int, default=5)
    sp.add_argument("--heuristic", choices=("intersection", "union", "grow-diag"), default="grow-diag")
    sp.add_argument("--ttable-prefix", help="also write <prefix>.fwd and <prefix>.bwd")
    categories(sp)

    sp = add("lm-train", cmd_lm_train, "modified Kneser-Ney LM on the target side, ARPA output")
    sp.add_argument("--train", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--order", type=int, default=3)
    sp.add_argument("--min-count", type=int, default=2)
    categories(sp)

    sp = add("phrases", cmd_phrases, "extract and score the phrase table")
    sp.add_argument("--train", required=True)
    sp.add_argument("--align", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--max-len", type=int, default=7)
    sp.add_argument("--ttable-prefix", help="lexical tables written by align (retrained if absent)")
    sp.add_argument("--iterations", type=int, default=5)
    sp.add_argument("--sparse-out", help="also write the sparse-feature inventory")
    categories(sp)

    sp = add("catlex", cmd_catlex, "generative category lexicon p(category | target word)")
    sp.add_argument("--train", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--alpha", type=float, default=0.1)
    categories(sp)

    for name, fn, modes, default in (("nnjm-train", cmd_nnjm_train, ("none", "onehot-concat", "embedding",
                                                                        "hidden-append"), "onehot-concat"),
                                     ("btm-train", cmd_btm_train, ("none", "onehot-concat", "embedding",
                                                                      "pseudo-token"), "onehot-concat")):
        sp = add(name, fn, f"train the {name.split('-')[0].upper()} lexical model")
        sp.add_argument("--train", required=True)
        sp.add_argument("--align", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--mode", choices=modes, default=default, help="category input mode")
        sp.add_argument("--src-vocab", help="read if present, else built and written here")
        sp.add_argument("--tgt-vocab", help="read if present, else built and written here")
        sp.add_argument("--config", default="desk", help="preset name (desk, paper) or pipeline config file")
        sp.add_argument("--epochs", type=int)
        categories(sp)

    def model_flags(sp):
        sp.add_argument("--model-dir", help="directory with phrases.tsv, lm.arpa, catlex.tsv, ...")
        for flag in ("phrases", "lm", "catlex", "sparse", "nnjm", "btm", "src-vocab", "tgt-vocab"):
            sp.add_argument(f"--{flag}")
        sp.add_argument("--nnjm-mode", default="onehot-concat")
        sp.add_argument("--btm-mode", default="onehot-concat")
        sp.add_argument("--decoder-config", help="key=value decoder config")
        sp.add_argument("--features", help="comma list of wp,cwp,catvec,catlex,nnjm,btm")
        sp.add_argument("--beam", type=int)
        sp.add_argument("--nbest", type=int)
        sp.add_argument("--weights", help="weights file (name<TAB>value)")
        categories(sp)

    sp = add("decode", cmd_decode, "translate a test-format corpus")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--nbest-out")
    model_flags(sp)

    sp = add("tune", cmd_tune, "tune log-linear weights on a dev set")
    sp.add_argument("--dev", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--trace")
    sp.add_argument("--optimizer", choices=("mert", "mira"), default="mert")
    sp.add_argument("--iterations", type=int, default=5)
    sp.add_argument("--mira-c", type=float, default=0.01)
    sp.add_argument("--mira-epochs", type=int, default=15)
    model_flags(sp)

    sp = add("score", cmd_score, "BLEU, TER and optional significance against a baseline")
    sp.add_argument("--hyp", required=True)
    sp.add_argument("--refs", required=True, help="test-format corpus holding the references")
    sp.add_argument("--baseline")
    sp.add_argument("--samples", type=int, default=10000)
    sp.add_argument("--senses", help="senses.tsv for polysemy accuracy")
    categories(sp)

    sp = add("experiment", cmd_experiment, "train, tune and compare all system rows")
    sp.add_argument("--plan", help="JSON experiment plan")
    sp.add_argument("--data")
    sp.add_argument("--out")
    sp.add_argument("--config", default="desk")
    sp.add_argument("--rows", help="comma list of row names (default: all)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers is None and os.environ.get("CATMT_WORKERS"):
        args.workers = int(os.environ["CATMT_WORKERS"])
    try:
        args.func(args)
    except UsageError as e:
        print(f"catmt {args.command}: error: {e}", file=sys.stderr)
        return 1
    except (CorpusFormatError, FileNotFoundError, IsADirectoryError, KeyError, ValueError,
            TrainingDiverged) as e:
        print(f"catmt {args.command}: data error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
