"""
End-to-end commands: the three-way initialization ablation and the long-context evaluation.

Every step runs inside `stage(name)`, so a failure surfaces as a `StageError` naming the step.
"""

import contextlib
import dataclasses
import logging
import typing
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .accounting import AllocationMeter, linearity_factor
from .alignment import AlignmentTable, ParallelCorpus, extract_counts, train_ibm1
from .config import TypedConfig
from .encoder import EncoderConfig, EncoderModel, build_model, encode_hidden, load_model, save_model, with_body
from .errors import ConfigErrorInvalidValue, MissingPathError, StageError
from .evaluation import EvalReport, eval_mlm
from .helpers import derive_seed, read_lines, write_tsv
from .synthetic import ToyConfig, make_toy
from .tokenizer import TokenizerModel, train_bpe
from .training import Checkpoint, TokenizedCorpus, TrainConfig, run_two_stage, write_losses
from .transtokenizer import (
    EmbeddingMatrix,
    FallbackMap,
    coverage_report,
    default_fallback_map,
    init_embeddings,
    random_embeddings,
)

logger = logging.getLogger(__name__)

VARIANTS = ("transtokenized", "embedding_reinitialized", "fully_random")
ALLOCATION_LENGTHS = (256, 512, 1024, 2048)


def toy_encoder() -> EncoderConfig:
    """
    Desk-scale encoder: hidden 64, 6 layers; vocab_size is replaced by the tokenizer's.
    """
    return EncoderConfig(
        hidden=64,
        layers=6,
        heads=4,
        intermediate=128,
        vocab_size=512,
        max_context=2048,
        local_window=32,
    )


def toy_training() -> TrainConfig:
    """
    Two-stage budget used for every ablation variant.
    """
    return TrainConfig(
        batch_size=8,
        stage1_steps=450,
        stage1_context=64,
        stage2_steps=50,
        stage2_context=256,
    )


def toy_source_training() -> TrainConfig:
    """
    Pretraining budget of the synthetic source model.
    """
    return TrainConfig(batch_size=8, stage1_steps=600, stage1_context=64, stage2_steps=0, learning_rate=1e-3)


@dataclass
class PipelineConfig(TypedConfig):
    """
    Inputs, outputs and stage parameters of the end-to-end commands.

    Unset corpus paths are filled with a freshly generated toy setup; unset tokenizers and source model are
    trained from the corpora.
    """

    out_dir: str = "transmodern-run"
    source_corpus: typing.Optional[str] = None
    target_corpus: typing.Optional[str] = None
    parallel_corpus: typing.Optional[str] = None
    source_tokenizer: typing.Optional[str] = None
    target_tokenizer: typing.Optional[str] = None
    source_model: typing.Optional[str] = None
    fallback: typing.Optional[str] = None
    checkpoint: typing.Optional[str] = None
    source_vocab_size: int = 400
    target_vocab_size: int = 400
    target_normalization: str = "arabic"
    ibm_iterations: int = 5
    long_context: typing.Optional[int] = None
    encoder: EncoderConfig = field(default_factory=toy_encoder)
    train: TrainConfig = field(default_factory=toy_training)
    source_train: TrainConfig = field(default_factory=toy_source_training)
    toy: ToyConfig = field(default_factory=ToyConfig)
    seed: int = 0

    def __post_init__(self) -> None:
        """
        Range checks that don't need the filesystem.
        """
        if self.ibm_iterations < 1:
            raise ConfigErrorInvalidValue("ibm_iterations", self.ibm_iterations, "must be >= 1")
        if self.long_context is not None and self.long_context < 1:
            raise ConfigErrorInvalidValue("long_context", self.long_context, "must be >= 1")

    def input_paths(self) -> dict[str, str]:
        """
        Every configured input path by field name.
        """
        names = ("source_corpus", "target_corpus", "parallel_corpus", "source_tokenizer", "target_tokenizer",
                 "source_model", "fallback", "checkpoint")
        return {name: getattr(self, name) for name in names if getattr(self, name) is not None}

    def validate_paths(self, required: typing.Iterable[str] = ()) -> None:
        """
        Raise one MissingPathError listing every configured (or required but unset) input that does not exist.
        """
        paths = self.input_paths()
        missing = [f"{name}=<unset>" for name in required if name not in paths]
        missing += [f"{name}={path}" for name, path in paths.items() if not Path(path).exists()]
        if missing:
            raise MissingPathError(missing)

    @property
    def out(self) -> Path:
        """
        Output directory as a Path.
        """
        return Path(self.out_dir)


@contextlib.contextmanager
def stage(name: str) -> typing.Iterator[None]:
    """
    Run a block as a named stage; any exception is re-raised as StageError(name, cause).
    """
    logger.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        raise StageError(name, e) from e


def _tokenizer(path: str | None, corpus: list[str], vocab_size: int, normalization: str, out: Path) -> TokenizerModel:
    if path is not None:
        return TokenizerModel.load(path)
    tokenizer = train_bpe(corpus, vocab_size, normalization=normalization)
    tokenizer.save(out)
    return tokenizer


def pretrain(
    config: EncoderConfig,
    corpus: TokenizedCorpus,
    train: TrainConfig,
    out_dir: Path,
    init_emb: EmbeddingMatrix = None,
    seed: int = 0,
) -> Checkpoint:
    """
    Build a model for `corpus`'s vocabulary, run both stages and write model.enc, checkpoint.enc and losses.tsv.
    """
    config = dataclasses.replace(config, vocab_size=corpus.vocab_size)
    model = build_model(config, init_emb, seed)
    return pretrain_model(model, corpus, train, out_dir)


def pretrain_model(model: EncoderModel, corpus: TokenizedCorpus, train: TrainConfig, out_dir: Path) -> Checkpoint:
    """
    `run_two_stage` plus the standard output files.
    """
    checkpoint = run_two_stage(model, corpus, train)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_model(checkpoint.model, out_dir / "model.enc")
    checkpoint.save(out_dir / "checkpoint.enc")
    write_losses(out_dir / "losses.tsv", checkpoint.losses)
    return checkpoint


@dataclass
class AblationInputs:
    """
    Resolved artifacts shared by the three ablation variants.
    """

    target_corpus: TokenizedCorpus
    target_tokenizer: TokenizerModel
    source_model: EncoderModel
    transtokenized: EmbeddingMatrix
    source_embeddings: EmbeddingMatrix


def prepare_ablation(config: PipelineConfig) -> AblationInputs:
    """
    Inputs, tokenizers, source model, alignment and transtokenized embeddings.
    """
    config.validate_paths()
    out = config.out
    out.mkdir(parents=True, exist_ok=True)

    with stage("inputs"):
        if None in (config.source_corpus, config.target_corpus, config.parallel_corpus):
            files = make_toy(dataclasses.replace(config.toy, seed=config.seed)).save(out / "toy")
        else:
            files = {}
        source_texts = read_lines(config.source_corpus or files["source"])
        target_texts = read_lines(config.target_corpus or files["target"])
        parallel = ParallelCorpus.load(config.parallel_corpus or files["parallel"])

    with stage("tokenizers"):
        src = _tokenizer(config.source_tokenizer, source_texts, config.source_vocab_size, "none",
                         out / "source_tokenizer.json")
        tgt = _tokenizer(config.target_tokenizer, target_texts, config.target_vocab_size,
                         config.target_normalization, out / "target_tokenizer.json")

    with stage("source-model"):
        if config.source_model is not None:
            source_model = load_model(config.source_model)
        else:
            source_corpus = TokenizedCorpus.from_texts(source_texts, src)
            source_model = pretrain(
                config.encoder, source_corpus, config.source_train, out / "source_model",
                seed=derive_seed(config.seed, "source_model"),
            ).model
        if source_model.config.vocab_size != src.vocab_size:
            raise ConfigErrorInvalidValue("source_model", source_model.config.vocab_size,
                                          f"vocab_size must match the source tokenizer ({src.vocab_size})")

    with stage("align"):
        table = train_ibm1(parallel, tgt, src, config.ibm_iterations)
        counts = extract_counts(table, parallel, tgt, src)
        counts.save(out / "alignment.tsv")

    with stage("transtokenize"):
        source_embeddings = EmbeddingMatrix.from_model(source_model)
        fallback = default_fallback_map(tgt, src)
        if config.fallback is not None:
            fallback.entries |= FallbackMap.load(config.fallback, tgt, src).entries
        transtokenized = init_embeddings(
            counts, source_embeddings, fallback, tgt, derive_seed(config.seed, "transtokenize")
        )
        transtokenized.save(out / "transtokenized.emb")

    return AblationInputs(
        target_corpus=TokenizedCorpus.from_texts(target_texts, tgt),
        target_tokenizer=tgt,
        source_model=source_model,
        transtokenized=transtokenized,
        source_embeddings=source_embeddings,
    )


def ablation_models(config: PipelineConfig, inputs: AblationInputs) -> dict[str, EncoderModel]:
    """
    The three initializations, identical in everything else.
    """
    target_config = dataclasses.replace(inputs.source_model.config, vocab_size=inputs.target_tokenizer.vocab_size)
    seed = derive_seed(config.seed, "ablation")
    reinitialized = random_embeddings(
        target_config.vocab_size, inputs.source_embeddings, derive_seed(config.seed, "reinitialized_embeddings")
    )
    return {
        "transtokenized": with_body(inputs.source_model, target_config, inputs.transtokenized, seed),
        "embedding_reinitialized": with_body(inputs.source_model, target_config, reinitialized, seed),
        "fully_random": build_model(target_config, None, seed),
    }


def cmd_ablation(config: PipelineConfig) -> dict[str, EvalReport]:
    """
    Train the transtokenized, embedding-reinitialized and fully random variants with the same budget and compare
    their held-out MLM loss and perplexity.

    Writes ablation.tsv (model, mlm_loss, perplexity) and one JSON report per variant into out_dir.
    """
    inputs = prepare_ablation(config)
    _, heldout = inputs.target_corpus.split(config.train.heldout_fraction, config.train.seed)
    if heldout is None:
        raise StageError("evaluate", ConfigErrorInvalidValue("heldout_fraction", 0.0, "ablation needs held-out data"))

    reports: dict[str, EvalReport] = {}
    for name, model in ablation_models(config, inputs).items():
        with stage(f"train:{name}"):
            pretrain_model(model, inputs.target_corpus, config.train, config.out / name)
        with stage(f"evaluate:{name}"):
            report = eval_mlm(
                model, heldout, config.train.stage1_context, config.train, derive_seed(config.seed, "ablation_eval")
            )
            report.task = f"ablation:{name}"
            if name == "transtokenized":
                coverage = coverage_report(inputs.transtokenized, inputs.target_tokenizer)
                report.details["coverage"] = {tag.name.lower(): value for tag, value in coverage.fractions.items()}
            report.save(config.out / name, "mlm")
            reports[name] = report

    write_tsv(
        config.out / "ablation.tsv",
        [("model", "mlm_loss", "perplexity"),
         *((name, f"{r.metrics['loss']:.4f}", f"{r.metrics['perplexity']:.2f}") for name, r in reports.items())],
    )
    return reports


def local_allocation_profile(
    model: EncoderModel, lengths: typing.Sequence[int] = ALLOCATION_LENGTHS, seed: int = 0
) -> dict[int, dict[str, int]]:
    """
    Score elements allocated per attention category by one forward pass at each length.
    """
    profile: dict[int, dict[str, int]] = {}
    for length in lengths:
        generator = torch.Generator().manual_seed(derive_seed(seed, "allocation", length))
        ids = torch.randint(model.config.vocab_size, (length,), generator=generator)
        with torch.no_grad(), AllocationMeter().measure() as record:
            encode_hidden(model, ids)
        profile[length] = dict(record.totals)
    return profile


def cmd_longcontext(config: PipelineConfig) -> tuple[EvalReport, EvalReport]:
    """
    MLM loss and perplexity at the stage-1 context and at a long context (default 8x), plus allocation accounting.

    Writes longcontext.tsv (context, mlm_loss, perplexity, local_scores, global_scores) and allocation.tsv.
    """
    config.validate_paths(required=("checkpoint", "target_corpus", "target_tokenizer"))
    short = config.train.stage1_context
    long = config.long_context or 8 * short

    with stage("load"):
        model = load_model(typing.cast(str, config.checkpoint))
        tokenizer = TokenizerModel.load(typing.cast(str, config.target_tokenizer))
        corpus = TokenizedCorpus.from_texts(read_lines(typing.cast(str, config.target_corpus)), tokenizer)

    reports = []
    for context in (short, long):
        with stage(f"evaluate:{context}"):
            reports.append(eval_mlm(model, corpus, context, config.train, derive_seed(config.seed, "longcontext")))

    with stage("allocation"):
        lengths = [n for n in ALLOCATION_LENGTHS if n <= model.config.max_context]
        profile = local_allocation_profile(model, lengths, config.seed)
        local = [profile[n].get("local_scores", 0) for n in lengths]
        factor = linearity_factor(lengths, local) if len(lengths) > 1 and all(local) else float("nan")
        logger.info("local-attention allocation linearity factor over %s: %.4f", lengths, factor)

    config.out.mkdir(parents=True, exist_ok=True)
    for report in reports:
        report.details["linearity_factor"] = factor
        report.details["allocation_profile"] = {str(n): v for n, v in profile.items()}
        report.save(config.out, f"mlm_{report.context_len}")
    write_tsv(
        config.out / "longcontext.tsv",
        [("context", "mlm_loss", "perplexity", "local_scores", "global_scores"),
         *((r.context_len, f"{r.metrics['loss']:.4f}", f"{r.metrics['perplexity']:.2f}",
            r.details["peak_allocations"].get("local_scores", 0), r.details["peak_allocations"].get("global_scores", 0))
           for r in reports)],
    )
    write_tsv(
        config.out / "allocation.tsv",
        [("length", "local_scores", "global_scores"),
         *((n, profile[n].get("local_scores", 0), profile[n].get("global_scores", 0)) for n in lengths)],
    )
    return reports[0], reports[1]


def load_alignment(path: str | Path, tgt: TokenizerModel, source_vocab_size: int) -> AlignmentTable:
    """
    Read an alignment table against the target tokenizer and a source vocabulary of `source_vocab_size` ids.
    """
    return AlignmentTable.load(path, tgt.vocab_size, source_vocab_size)
