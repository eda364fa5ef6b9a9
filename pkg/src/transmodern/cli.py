"""
Command-line entry point: one subcommand per pipeline stage plus the end-to-end toy experiments.

Logs and summary tables go to standard error; artifacts and reports go to files.
"""

import argparse
import dataclasses
import logging
import typing
from pathlib import Path

from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from .__about__ import __version__
from .alignment import ParallelCorpus, extract_counts, train_ibm1
from .encoder import EncoderConfig, load_model
from .errors import ConfigErrorInvalidValue, StageError
from .evaluation import (
    EvalReport,
    HeadConfig,
    LabeledTexts,
    RetrievalData,
    classify_eval,
    eval_mlm,
    finetune_bi_encoder,
    ner_eval,
    read_conll,
    retrieval_eval,
)
from .helpers import derive_seed, read_lines, write_tsv
from .pipeline import PipelineConfig, cmd_ablation, cmd_longcontext, load_alignment, pretrain, stage
from .synthetic import ToyConfig, make_toy
from .tokenizer import NORMALIZATIONS, TokenizerModel, character_tokenizer, fertility_comparison, train_bpe
from .training import TokenizedCorpus, TrainConfig, write_heldout
from .transtokenizer import (
    EmbeddingMatrix,
    FallbackMap,
    coverage_report,
    default_fallback_map,
    init_embeddings,
)

logger = logging.getLogger("transmodern")

console = Console(stderr=True)


def setup_logging(level: str) -> None:
    """
    Route every transmodern logger through a rich handler on standard error.
    """
    handler = RichHandler(console=console, show_path=False, rich_tracebacks=False)
    handler.setFormatter(logging.Formatter("%(message)s", datefmt="[%X]"))
    logger.handlers[:] = [handler]
    logger.setLevel(level.upper())
    logger.propagate = False


def _print_table(title: str, columns: typing.Sequence[str], rows: typing.Iterable[typing.Sequence[typing.Any]]) -> None:
    table = Table(title=title)
    for column in columns:
        table.add_column(column)
    for row in rows:
        table.add_row(*(f"{v:.4f}" if isinstance(v, float) else str(v) for v in row))
    console.print(table)


def _print_report(report: EvalReport) -> None:
    _print_table(f"{report.task} ({report.samples} samples)", ["metric", "value"], report.metrics.items())


def _optional(path: str) -> str | None:
    return None if path.lower() == "none" else path


def _head_config(args: argparse.Namespace) -> HeadConfig:
    config = HeadConfig.load(args.config) if args.config else HeadConfig()
    if args.seeds:
        config = dataclasses.replace(config, seeds=args.seeds)
    return config


def _train_config(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig.load(args.config) if args.config else TrainConfig()


# --- commands ---


def cmd_train_tokenizer(args: argparse.Namespace) -> None:
    """
    train-tokenizer: BPE on a one-document-per-line corpus.
    """
    tokenizer = train_bpe(read_lines(args.corpus), args.vocab_size, normalization=args.normalization)
    tokenizer.save(args.out)
    logger.info("wrote %d-token tokenizer to %s", tokenizer.vocab_size, args.out)


def cmd_fertility(args: argparse.Namespace) -> None:
    """
    fertility: tokens per word of each tokenizer next to the character-level baseline.
    """
    corpus = read_lines(args.corpus)
    models = {Path(p).stem: TokenizerModel.load(p) for p in args.tokenizer}
    models["characters"] = character_tokenizer(corpus, models[next(iter(models))].normalization)
    reports = fertility_comparison(models, corpus)
    rows = [(name, r.ratio, r.words, r.tokens) for name, r in reports.items()]
    _print_table("fertility", ["tokenizer", "tokens/word", "words", "tokens"], rows)
    if args.out:
        write_tsv(args.out, [("tokenizer", "fertility", "words", "tokens"), *rows])


def cmd_align(args: argparse.Namespace) -> None:
    """
    align: IBM Model 1 on a parallel TSV, written as a target/source/count table.
    """
    corpus = ParallelCorpus.load(args.corpus)
    tgt = TokenizerModel.load(args.target_tokenizer)
    src = TokenizerModel.load(args.source_tokenizer)
    table = train_ibm1(corpus, tgt, src, args.iterations)
    counts = extract_counts(table, corpus, tgt, src)
    counts.save(args.out)
    argmax = counts.argmax()
    logger.info(
        "aligned %d of %d target tokens; log-likelihood %s",
        len(argmax),
        tgt.vocab_size,
        " -> ".join(f"{ll:.2f}" for ll in table.log_likelihoods),
    )


def cmd_transtokenize(args: argparse.Namespace) -> None:
    """
    transtokenize: initialize target embeddings from alignment counts and source embeddings.

    Without a source tokenizer the source vocabulary is the source matrix's rows and no fallback applies.
    """
    tgt = TokenizerModel.load(args.target_tokenizer)
    if args.source_model:
        source = EmbeddingMatrix.from_model(load_model(args.source_model))
    else:
        source = EmbeddingMatrix.load(args.source_emb)

    if args.source_tokenizer:
        src = TokenizerModel.load(args.source_tokenizer)
        fallback = default_fallback_map(tgt, src)
        if args.fallback:
            fallback.entries |= FallbackMap.load(args.fallback, tgt, src).entries
        source_vocab_size = src.vocab_size
    elif args.fallback:
        raise ConfigErrorInvalidValue("fallback", args.fallback, "source tokens can only be resolved with --src-tok")
    else:
        fallback = FallbackMap({})
        source_vocab_size = source.rows

    emb = init_embeddings(load_alignment(args.alignment, tgt, source_vocab_size), source, fallback, tgt, args.seed)
    emb.save(args.out)
    report = coverage_report(emb, tgt)
    _print_table(
        "embedding provenance",
        ["provenance", "rows", "fraction"],
        [(tag.name.lower(), report.counts[tag], report.fractions[tag]) for tag in report.counts],
    )


def cmd_pretrain(args: argparse.Namespace) -> None:
    """
    pretrain: two-stage MLM training from a transtokenized or random initialization.
    """
    encoder = EncoderConfig.load(args.config) if args.config else EncoderConfig()
    train = _train_config(args)
    tokenizer = TokenizerModel.load(args.tokenizer)
    corpus = TokenizedCorpus.from_texts(read_lines(args.corpus), tokenizer)
    init_path = _optional(args.init_emb)
    init_emb = EmbeddingMatrix.load(init_path) if init_path else None
    out = Path(args.out)
    checkpoint = pretrain(encoder, corpus, train, out, init_emb, derive_seed(args.seed, "pretrain"))
    write_heldout(out / "heldout.json", checkpoint.heldout)
    _print_table("held-out loss", ["checkpoint", "loss"], sorted(checkpoint.heldout.items()))


def cmd_eval_mlm(args: argparse.Namespace) -> None:
    """
    eval-mlm: masked LM loss and perplexity at a context length.
    """
    model = load_model(args.model)
    tokenizer = TokenizerModel.load(args.tokenizer)
    corpus = TokenizedCorpus.from_texts(read_lines(args.data), tokenizer)
    report = eval_mlm(model, corpus, args.context_len, _train_config(args), args.seed)
    report.save(args.out, f"mlm_{args.context_len}")
    _print_report(report)


def cmd_eval_retrieval(args: argparse.Namespace) -> None:
    """
    eval-retrieval: Recall@k and MRR; `--data` holds queries.tsv, documents.tsv and qrels.tsv.
    """
    data_dir = Path(args.data)
    data = RetrievalData.load(data_dir / "queries.tsv", data_dir / "documents.tsv", data_dir / "qrels.tsv")
    model = load_model(args.model)
    tokenizer = TokenizerModel.load(args.tokenizer)
    config = _head_config(args)
    if config.finetune_epochs:
        train_dir = Path(args.train) if args.train else data_dir
        train = RetrievalData.load(train_dir / "queries.tsv", train_dir / "documents.tsv", train_dir / "qrels.tsv")
        model = finetune_bi_encoder(model, tokenizer, train.training_pairs(), config, args.seed)
    report = retrieval_eval(data, model, tokenizer, args.ks)
    report.save(args.out, "retrieval")
    _print_report(report)


def cmd_eval_classify(args: argparse.Namespace) -> None:
    """
    eval-classify: linear head on pooled vectors; `--data` holds train.tsv and test.tsv.
    """
    data_dir = Path(args.data)
    report = classify_eval(
        load_model(args.model),
        TokenizerModel.load(args.tokenizer),
        LabeledTexts.load(data_dir / "train.tsv"),
        LabeledTexts.load(data_dir / "test.tsv"),
        _head_config(args),
    )
    report.save(args.out, "classification")
    _print_report(report)


def cmd_eval_ner(args: argparse.Namespace) -> None:
    """
    eval-ner: token head on first-subword features; `--data` holds train/test (and optional validation) CoNLL files.
    """
    data_dir = Path(args.data)
    validation = data_dir / "validation.conll"
    report = ner_eval(
        load_model(args.model),
        TokenizerModel.load(args.tokenizer),
        read_conll(data_dir / "train.conll"),
        read_conll(data_dir / "test.conll"),
        _head_config(args),
        validation=read_conll(validation) if validation.exists() else None,
    )
    report.save(args.out, "ner")
    _print_report(report)


def _pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    overrides: dict[str, typing.Any] = {"seed": args.seed}
    if args.out:
        overrides["out_dir"] = args.out
    if getattr(args, "checkpoint", None):
        overrides["checkpoint"] = args.checkpoint
    return dataclasses.replace(config, **overrides)


def cmd_ablation_command(args: argparse.Namespace) -> None:
    """
    ablation: transtokenized vs embedding-reinitialized vs fully random.
    """
    reports = cmd_ablation(_pipeline_config(args))
    _print_table(
        "transtokenization ablation",
        ["model", "mlm loss", "perplexity"],
        [(name, r.metrics["loss"], r.metrics["perplexity"]) for name, r in reports.items()],
    )


def cmd_longcontext_command(args: argparse.Namespace) -> None:
    """
    longcontext: short vs long context MLM, with score-allocation accounting.
    """
    short, long = cmd_longcontext(_pipeline_config(args))
    _print_table(
        "context length",
        ["context", "mlm loss", "perplexity", "local scores (peak)"],
        [
            (
                r.context_len,
                r.metrics["loss"],
                r.metrics["perplexity"],
                r.details["peak_allocations"].get("local_scores", 0),
            )
            for r in (short, long)
        ],
    )
    logger.info("local allocation linearity factor: %.4f", short.details["linearity_factor"])


def cmd_make_toy(args: argparse.Namespace) -> None:
    """
    make-toy: write the synthetic corpora, parallel corpus and planted dictionary.
    """
    config = ToyConfig.load(args.config) if args.config else ToyConfig()
    files = make_toy(dataclasses.replace(config, seed=args.seed)).save(args.out)
    for name, path in files.items():
        logger.info("%s: %s", name, path)


COMMANDS: dict[str, typing.Callable[[argparse.Namespace], None]] = {
    "train-tokenizer": cmd_train_tokenizer,
    "fertility": cmd_fertility,
    "align": cmd_align,
    "transtokenize": cmd_transtokenize,
    "pretrain": cmd_pretrain,
    "eval-mlm": cmd_eval_mlm,
    "eval-retrieval": cmd_eval_retrieval,
    "eval-classify": cmd_eval_classify,
    "eval-ner": cmd_eval_ner,
    "ablation": cmd_ablation_command,
    "longcontext": cmd_longcontext_command,
    "make-toy": cmd_make_toy,
}


def build_parser() -> argparse.ArgumentParser:
    """
    Parser with one subcommand per entry of COMMANDS.
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root seed; every random draw derives from it")
    common.add_argument("--log-level", default="INFO", help="DEBUG, INFO, WARNING or ERROR (default: INFO)")

    parser = argparse.ArgumentParser(prog="transmodern", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, help=help_text, description=help_text, parents=[common])

    p = add("train-tokenizer", "train a BPE tokenizer")
    p.add_argument("--corpus", required=True, help="UTF-8 text, one document per line")
    p.add_argument("--vocab-size", type=int, required=True, help="target vocabulary size (specials included)")
    p.add_argument("--normalization", choices=NORMALIZATIONS, default="none", help="script normalization")
    p.add_argument("--out", required=True, help="tokenizer JSON path")

    p = add("fertility", "tokens-per-word diagnostic against a character-level baseline")
    p.add_argument("--tokenizer", required=True, nargs="+", help="one or more tokenizer JSON files")
    p.add_argument("--corpus", required=True, help="UTF-8 text, one document per line")
    p.add_argument("--out", help="optional TSV report path")

    p = add("align", "IBM Model 1 alignment counts between two tokenizers")
    p.add_argument("--parallel", "--corpus", dest="corpus", required=True, help="parallel TSV: target<TAB>source")
    p.add_argument("--tgt-tok", "--target-tokenizer", dest="target_tokenizer", required=True, help="tokenizer JSON")
    p.add_argument("--src-tok", "--source-tokenizer", dest="source_tokenizer", required=True, help="tokenizer JSON")
    p.add_argument("--iters", "--iterations", dest="iterations", type=int, default=5, help="EM iterations (default: 5)")
    p.add_argument("--out", required=True, help="alignment TSV path")

    p = add("transtokenize", "initialize target embeddings from aligned source embeddings")
    p.add_argument("--align", "--alignment", dest="alignment", required=True, help="alignment TSV written by `align`")
    p.add_argument("--tgt-tok", "--target-tokenizer", dest="target_tokenizer", required=True, help="tokenizer JSON")
    p.add_argument(
        "--src-tok",
        "--source-tokenizer",
        dest="source_tokenizer",
        help="source tokenizer JSON; enables the default fallback list and --fallback",
    )
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--src-emb", "--source-emb", dest="source_emb", help="source embedding matrix (EMB1)")
    source.add_argument("--source-model", help="source model checkpoint (ENC1)")
    p.add_argument("--fallback", help="extra fallback TSV: target_token<TAB>source_token (needs --src-tok)")
    p.add_argument("--out", required=True, help="embedding matrix path")

    p = add("pretrain", "two-stage MLM pretraining")
    p.add_argument("--config", help="JSON/TOML file with `encoder` and `train` sections")
    p.add_argument("--corpus", required=True, help="UTF-8 text, one document per line")
    p.add_argument("--tokenizer", required=True, help="tokenizer JSON")
    p.add_argument("--init-emb", default="none", help="embedding matrix path, or 'none' for random")
    p.add_argument("--out", required=True, help="output directory")

    p = add("eval-mlm", "MLM loss and perplexity at a context length")
    p.add_argument("--model", required=True, help="model checkpoint")
    p.add_argument("--tokenizer", required=True, help="tokenizer JSON")
    p.add_argument("--data", required=True, help="UTF-8 text, one document per line")
    p.add_argument("--context-len", type=int, required=True, help="chunk length")
    p.add_argument("--config", help="file with a `train` section (masking settings)")
    p.add_argument("--out", required=True, help="report directory")

    p = add("eval-retrieval", "dense retrieval Recall@k and MRR")
    p.add_argument("--model", required=True, help="model checkpoint")
    p.add_argument("--tokenizer", required=True, help="tokenizer JSON")
    p.add_argument("--data", required=True, help="directory with queries.tsv, documents.tsv, qrels.tsv")
    p.add_argument("--train", help="directory with training queries/documents/qrels for fine-tuning")
    p.add_argument("--ks", type=int, nargs="+", default=[1, 5, 10], help="cut-offs (default: 1 5 10)")
    p.add_argument("--seeds", type=int, nargs="+", help="override head seeds")
    p.add_argument("--config", help="file with a `head` section")
    p.add_argument("--out", required=True, help="report directory")

    for name, help_text, layout in (
        ("eval-classify", "accuracy and macro-F1 with a linear head", "train.tsv and test.tsv"),
        ("eval-ner", "entity-level F1 with a token head", "train.conll, test.conll (and validation.conll)"),
    ):
        p = add(name, help_text)
        p.add_argument("--model", required=True, help="model checkpoint")
        p.add_argument("--tokenizer", required=True, help="tokenizer JSON")
        p.add_argument("--data", required=True, help=f"directory with {layout}")
        p.add_argument("--seeds", type=int, nargs="+", help="head seeds (default: 0 1 2)")
        p.add_argument("--config", help="file with a `head` section")
        p.add_argument("--out", required=True, help="report directory")

    p = add("ablation", "train and compare the three embedding initializations")
    p.add_argument("--config", help="pipeline JSON/TOML (default: generated toy setup)")
    p.add_argument("--out", help="output directory (overrides out_dir)")

    p = add("longcontext", "MLM at the stage-1 and a long context, with allocation accounting")
    p.add_argument("--config", help="pipeline JSON/TOML")
    p.add_argument("--checkpoint", help="model checkpoint (overrides the config)")
    p.add_argument("--out", help="output directory (overrides out_dir)")

    p = add("make-toy", "write the synthetic toy setup")
    p.add_argument("--config", help="file with a `toy` section")
    p.add_argument("--out", required=True, help="output directory")

    return parser


def main(argv: typing.Sequence[str] = None) -> int:
    """
    Run one subcommand; 0 on success, 1 when a stage failed (named on standard error).
    """
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        with stage(args.command):
            COMMANDS[args.command](args)
    except StageError as e:
        console.print(f"error: {e}", style="bold red", markup=False, highlight=False)
        logger.debug("failure details", exc_info=e)
        return 1
    return 0
