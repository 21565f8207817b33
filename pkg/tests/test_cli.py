"""End-to-end runs of the command-line subcommands on a tiny synthetic corpus."""

import pytest

from catmt.cli import main
from catmt.corpusio import GeneratorSpec


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    GeneratorSpec(n_train=300, n_dev=15, n_test=15, n_polysemous=4, filler_vocab_size=40, seed=3).write(d / "g.cfg")
    assert main(["generate", "--spec", str(d / "g.cfg"), "--out", str(d / "raw")]) == 0
    cats = str(d / "raw" / "categories.txt")
    for split, fmt in (("train", "train"), ("dev", "test"), ("test", "test")):
        assert main(["preprocess", "--in", str(d / "raw" / f"{split}.tsv"), "--out", str(d / f"{split}.tsv"),
                     "--format", fmt, "--categories", cats]) == 0
    return d, cats


@pytest.fixture(scope="module")
def models(data):
    d, cats = data
    m = d / "models"
    m.mkdir()
    train = str(d / "train.tsv")
    steps = [
        ["align", "--train", train, "--out", str(m / "align.txt"), "--ttable-prefix", str(m / "t")],
        ["lm-train", "--train", train, "--out", str(m / "lm.arpa"), "--min-count", "1"],
        ["phrases", "--train", train, "--align", str(m / "align.txt"), "--out", str(m / "phrases.tsv"),
         "--ttable-prefix", str(m / "t"), "--sparse-out", str(m / "sparse.tsv")],
        ["catlex", "--train", train, "--out", str(m / "catlex.tsv")],
        ["nnjm-train", "--train", train, "--align", str(m / "align.txt"), "--out", str(m / "nnjm.onehot-concat.params"),
         "--src-vocab", str(m / "src.vocab"), "--tgt-vocab", str(m / "tgt.vocab"), "--epochs", "1"],
        ["btm-train", "--train", train, "--align", str(m / "align.txt"), "--out", str(m / "btm.onehot-concat.params"),
         "--src-vocab", str(m / "src.vocab"), "--tgt-vocab", str(m / "tgt.vocab"), "--epochs", "1"],
        ["classify-train", "--train", train, "--out", str(m / "cls.nb")],
    ]
    for argv in steps:
        assert main(argv + ["--categories", cats]) == 0, argv[0]
    return m


class TestPipeline:
    def test_generate_deterministic(self, data, tmp_path):
        d, _ = data
        assert main(["generate", "--spec", str(d / "g.cfg"), "--out", str(tmp_path / "again")]) == 0
        for name in ("train.tsv", "dev.tsv", "test.tsv", "senses.tsv", "categories.txt", "spec.cfg"):
            assert (tmp_path / "again" / name).read_bytes() == (d / "raw" / name).read_bytes()

    def test_artifacts_written(self, models):
        for name in ("align.txt", "t.fwd", "t.bwd", "lm.arpa", "phrases.tsv", "sparse.tsv", "catlex.tsv",
                     "src.vocab", "tgt.vocab", "nnjm.onehot-concat.params", "btm.onehot-concat.params", "cls.nb"):
            assert (models / name).stat().st_size > 0, name

    def test_tune_decode_score(self, data, models, capsys):
        d, cats = data
        common = ["--model-dir", str(models), "--categories", cats, "--beam", "5", "--nbest", "10"]
        feats = ["--features", "catvec,catlex,nnjm,btm,cwp"]
        assert main(["tune", "--dev", str(d / "dev.tsv"), "--out", str(d / "w.txt"), "--trace", str(d / "tr.txt"),
                     "--optimizer", "mira", "--iterations", "1", "--mira-epochs", "2"] + common + feats) == 0
        assert len((d / "tr.txt").read_text().splitlines()) == 2
        assert main(["decode", "--in", str(d / "test.tsv"), "--out", str(d / "hyp.txt"), "--weights", str(d / "w.txt"),
                     "--nbest-out", str(d / "nb.txt")] + common + feats) == 0
        assert len((d / "hyp.txt").read_text().splitlines()) == 15
        assert main(["decode", "--in", str(d / "test.tsv"), "--out", str(d / "base.txt")] + common) == 0
        capsys.readouterr()
        assert main(["score", "--hyp", str(d / "hyp.txt"), "--refs", str(d / "test.tsv"), "--baseline",
                     str(d / "base.txt"), "--samples", "100", "--senses", str(d / "raw" / "senses.tsv"),
                     "--categories", cats]) == 0
        out = capsys.readouterr().out
        assert out.startswith("BLEU\t") and "p_value" in out and "polysemy_accuracy" in out

    def test_classify_apply(self, data, models, capsys):
        d, cats = data
        assert main(["classify-apply", "--model", str(models / "cls.nb"), "--in", str(d / "test.tsv"),
                     "--format", "test", "--out", str(d / "relabeled.tsv"), "--report-accuracy",
                     "--categories", cats]) == 0
        assert capsys.readouterr().out.startswith("accuracy\t")
        assert len((d / "relabeled.tsv").read_text().splitlines()) == 15


class TestExitCodes:
    def test_usage_errors(self, data, capsys):
        d, cats = data
        assert main([]) == 1
        assert main(["decode", "--in", "x"]) == 1  # missing required flags
        assert main(["decode", "--in", str(d / "test.tsv"), "--out", str(d / "o"), "--categories", cats]) == 1
        assert main(["decode", "--in", str(d / "test.tsv"), "--out", str(d / "o"), "--categories", cats,
                     "--phrases", "p", "--lm", "l", "--features", "bogus"]) == 1
        assert main(["experiment"]) == 1
        assert "error" in capsys.readouterr().err

    def test_data_errors(self, data, tmp_path, capsys):
        d, cats = data
        bad = tmp_path / "bad.tsv"
        bad.write_text("a b\tx y\tOther\nonly\n", encoding="utf-8")
        assert main(["lm-train", "--train", str(bad), "--out", str(tmp_path / "lm"), "--categories", cats]) == 2
        err = capsys.readouterr().err
        assert "bad.tsv" in err and "2" in err
        assert main(["lm-train", "--train", str(tmp_path / "missing.tsv"), "--out", str(tmp_path / "lm"),
                     "--categories", cats]) == 2

    def test_help(self, capsys):
        assert main(["--help"]) == 0
        assert "experiment" in capsys.readouterr().out
