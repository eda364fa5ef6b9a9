import json

import pytest

import src.transmodern as transmodern
from src.transmodern.__about__ import __version__
from src.transmodern.cli import COMMANDS, build_parser, main

TOY = """
[toy]
source-documents = 20
target-documents = 20
sentences-per-document = 3
parallel-pairs = 50
"""

PRETRAIN = """
[encoder]
hidden = 16
layers = 3
heads = 2
intermediate = 24
vocab-size = 40
max-context = 128
local-window = 4

[train]
batch-size = 2
stage1-steps = 3
stage1-context = 16
stage2-steps = 2
stage2-context = 32
progress = false
"""


@pytest.fixture(scope="module")
def toy_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "toy.toml").write_text(TOY)
    assert main(["make-toy", "--config", str(root / "toy.toml"), "--out", str(root / "toy")]) == 0
    return root


def test_version(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--version"])

    assert e.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_every_command_has_a_parser():
    parser = build_parser()

    for command in COMMANDS:
        with pytest.raises(SystemExit) as e:
            parser.parse_args([command, "--help"])
        assert e.value.code == 0

    with pytest.raises(SystemExit):
        parser.parse_args([])


def test_make_toy(toy_dir):
    files = sorted(p.name for p in (toy_dir / "toy").iterdir())

    assert files == ["dictionary.tsv", "parallel.tsv", "source.txt", "target.txt"]
    assert len((toy_dir / "toy" / "target.txt").read_text(encoding="utf-8").splitlines()) == 20


def test_failing_stage_is_reported(tmp_path, capsys):
    code = main(
        [
            "align",
            "--corpus",
            str(tmp_path / "missing.tsv"),
            "--target-tokenizer",
            str(tmp_path / "t.json"),
            "--source-tokenizer",
            str(tmp_path / "s.json"),
            "--out",
            str(tmp_path / "alignment.tsv"),
        ]
    )

    assert code == 1
    assert "error: stage 'align' failed" in capsys.readouterr().err


def test_tokenize_align_and_transtokenize(toy_dir, tmp_path, capsys):
    toy = toy_dir / "toy"
    for side, normalization in (("source", "none"), ("target", "arabic")):
        code = main(
            [
                "train-tokenizer",
                "--corpus",
                str(toy / f"{side}.txt"),
                "--vocab-size",
                "150",
                "--normalization",
                normalization,
                "--out",
                str(tmp_path / f"{side}.json"),
            ]
        )
        assert code == 0

    target = transmodern.TokenizerModel.load(tmp_path / "target.json")
    assert target.normalization == "arabic"

    assert main(["fertility", "--tokenizer", str(tmp_path / "target.json"), "--corpus", str(toy / "target.txt"),
                 "--out", str(tmp_path / "fertility.tsv")]) == 0
    rows = (tmp_path / "fertility.tsv").read_text(encoding="utf-8").splitlines()
    assert [row.split("\t")[0] for row in rows] == ["tokenizer", "target", "characters"]

    assert main(["align", "--parallel", str(toy / "parallel.tsv"), "--tgt-tok", str(tmp_path / "target.json"),
                 "--src-tok", str(tmp_path / "source.json"), "--iters", "2", "--out", str(tmp_path / "alignment.tsv")]) == 0
    assert (tmp_path / "alignment.tsv").stat().st_size > 0

    source = transmodern.TokenizerModel.load(tmp_path / "source.json")
    model = transmodern.build_model(
        transmodern.EncoderConfig(hidden=16, layers=3, heads=2, intermediate=24, vocab_size=source.vocab_size), seed=0
    )
    transmodern.save_model(model, tmp_path / "source.enc")

    assert main(["transtokenize", "--alignment", str(tmp_path / "alignment.tsv"),
                 "--target-tokenizer", str(tmp_path / "target.json"), "--source-tokenizer", str(tmp_path / "source.json"),
                 "--source-model", str(tmp_path / "source.enc"), "--out", str(tmp_path / "target.emb")]) == 0
    emb = transmodern.EmbeddingMatrix.load(tmp_path / "target.emb")
    assert emb.values.shape == (target.vocab_size, 16)
    # [MASK] never occurs in the parallel text, so the special-token fallback covers it
    assert emb.provenance[target.special_id("mask")] == transmodern.Provenance.FALLBACK

    transmodern.EmbeddingMatrix.from_model(model).save(tmp_path / "source.emb")
    assert main(["transtokenize", "--align", str(tmp_path / "alignment.tsv"), "--src-emb", str(tmp_path / "source.emb"),
                 "--tgt-tok", str(tmp_path / "target.json"), "--seed", "3", "--out", str(tmp_path / "bare.emb")]) == 0
    bare = transmodern.EmbeddingMatrix.load(tmp_path / "bare.emb")
    assert bare.values.shape == (target.vocab_size, 16)
    assert transmodern.Provenance.FALLBACK not in bare.provenance.tolist()
    aligned = transmodern.Provenance.ALIGNED
    assert (bare.provenance == aligned).sum() == (emb.provenance == aligned).sum()

    (tmp_path / "fallback.tsv").write_text("[MASK]\t[MASK]\n", encoding="utf-8")
    declared = ["--align", str(tmp_path / "alignment.tsv"), "--src-emb", str(tmp_path / "source.emb"),
                "--fallback", str(tmp_path / "fallback.tsv"), "--tgt-tok", str(tmp_path / "target.json"),
                "--seed", "3", "--out", str(tmp_path / "fallback.emb")]
    capsys.readouterr()
    assert main(["transtokenize", *declared]) == 1
    assert "error: stage 'transtokenize' failed" in capsys.readouterr().err

    assert main(["transtokenize", *declared, "--src-tok", str(tmp_path / "source.json")]) == 0
    with_fallback = transmodern.EmbeddingMatrix.load(tmp_path / "fallback.emb")
    assert with_fallback.provenance[target.special_id("mask")] == transmodern.Provenance.FALLBACK


def test_pretrain_and_eval_mlm(toy_dir, tmp_path):
    (tmp_path / "run.toml").write_text(PRETRAIN)
    corpus = str(toy_dir / "toy" / "target.txt")
    assert main(["train-tokenizer", "--corpus", corpus, "--vocab-size", "120", "--normalization", "arabic",
                 "--out", str(tmp_path / "tok.json")]) == 0

    assert main(["pretrain", "--config", str(tmp_path / "run.toml"), "--corpus", corpus,
                 "--tokenizer", str(tmp_path / "tok.json"), "--out", str(tmp_path / "model")]) == 0

    for name in ("model.enc", "checkpoint.enc", "losses.tsv", "heldout.json"):
        assert (tmp_path / "model" / name).exists()
    assert len((tmp_path / "model" / "losses.tsv").read_text().splitlines()) == 1 + 5

    assert main(["eval-mlm", "--model", str(tmp_path / "model" / "model.enc"), "--tokenizer", str(tmp_path / "tok.json"),
                 "--data", corpus, "--context-len", "16", "--config", str(tmp_path / "run.toml"),
                 "--out", str(tmp_path / "reports")]) == 0

    report = json.loads((tmp_path / "reports" / "mlm_16.json").read_text())
    assert report["context_len"] == 16
    assert report["metrics"]["perplexity"] >= 1.0
