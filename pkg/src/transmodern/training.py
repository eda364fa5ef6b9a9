"""
Masked-language-model pretraining: 80/10/10 masking, AdamW with linear warmup, two context-length stages.

Every random draw of a step (which chunks form the batch, which positions get masked) is seeded from
(seed, stage, step), so a run resumed from a checkpoint follows the uninterrupted trajectory exactly.
"""

import json
import logging
import math
import sys
import typing
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from tqdm import tqdm

from .config import TypedConfig
from .encoder import (
    DEFAULT_MASK_RATE,
    IGNORE_INDEX,
    EncoderConfig,
    EncoderModel,
    forward,
    mlm_loss,
    model_from_state,
    model_state,
    read_container,
    write_container,
)
from .errors import (
    CheckpointFormatError,
    ConfigErrorInvalidValue,
    EmptyCorpusError,
    NonFiniteLossError,
    SequenceTooLongError,
)
from .helpers import derive_seed, write_tsv
from .numerics import DTYPE
from .tokenizer import TokenizerModel, encode

logger = logging.getLogger(__name__)

STAGES = (1, 2)


@dataclass
class TrainConfig(TypedConfig):
    """
    Masking, optimizer and two-stage schedule settings.
    """

    # None: the encoder's mask_rate
    mask_rate: typing.Optional[float] = None
    # what happens to a selected position; must sum to 1
    mask_token_fraction: float = 0.8
    random_token_fraction: float = 0.1
    keep_fraction: float = 0.1
    batch_size: int = 8
    stage1_steps: int = 200
    stage1_context: int = 64
    stage2_steps: int = 50
    stage2_context: int = 256
    learning_rate: float = 3e-4
    weight_decay: float = 0.01
    # None: 10% of stage1_steps + stage2_steps
    warmup_steps: typing.Optional[int] = None
    grad_clip: float = 1.0
    heldout_fraction: float = 0.1
    eval_batch_size: int = 8
    log_every: int = 10
    progress: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        """
        Check fractions, step counts and context lengths.
        """
        if self.mask_rate is not None and not 0.0 < self.mask_rate < 1.0:
            raise ConfigErrorInvalidValue("mask_rate", self.mask_rate, "must be in (0, 1)")
        split = (self.mask_token_fraction, self.random_token_fraction, self.keep_fraction)
        if any(f < 0 for f in split) or not math.isclose(sum(split), 1.0, abs_tol=1e-9):
            raise ConfigErrorInvalidValue("mask/random/keep fractions", split, "must be >= 0 and sum to 1")
        for key in ("batch_size", "eval_batch_size", "stage1_context", "stage2_context", "log_every"):
            if getattr(self, key) < 1:
                raise ConfigErrorInvalidValue(key, getattr(self, key), "must be >= 1")
        for key in ("stage1_steps", "stage2_steps"):
            if getattr(self, key) < 0:
                raise ConfigErrorInvalidValue(key, getattr(self, key), "must be >= 0")
        if self.stage2_context < self.stage1_context:
            raise ConfigErrorInvalidValue("stage2_context", self.stage2_context, "must be >= stage1_context")
        if self.learning_rate < 0 or self.weight_decay < 0 or self.grad_clip < 0:
            raise ConfigErrorInvalidValue(
                "learning_rate/weight_decay/grad_clip", (self.learning_rate, self.weight_decay, self.grad_clip), ">= 0"
            )
        if self.warmup_steps is not None and self.warmup_steps < 0:
            raise ConfigErrorInvalidValue("warmup_steps", self.warmup_steps, "must be >= 0")
        if not 0.0 <= self.heldout_fraction < 1.0:
            raise ConfigErrorInvalidValue("heldout_fraction", self.heldout_fraction, "must be in [0, 1)")

    @property
    def total_steps(self) -> int:
        """
        Step budget over both stages.
        """
        return self.stage1_steps + self.stage2_steps

    @property
    def warmup(self) -> int:
        """
        Effective number of warmup steps.
        """
        if self.warmup_steps is None:
            return round(0.1 * self.total_steps)
        return self.warmup_steps

    def steps_for(self, stage: int) -> int:
        """
        Steps configured for a stage.
        """
        return self.stage1_steps if stage == 1 else self.stage2_steps

    def context_for(self, stage: int) -> int:
        """
        Chunk length of a stage.
        """
        return self.stage1_context if stage == 1 else self.stage2_context

    def first_step(self, stage: int) -> int:
        """
        Global index of a stage's first step.
        """
        return 0 if stage == 1 else self.stage1_steps

    def learning_rate_at(self, step: int) -> float:
        """
        Linear warmup to `learning_rate`, then constant.
        """
        if step < self.warmup:
            return self.learning_rate * (step + 1) / self.warmup
        return self.learning_rate

    @property
    def effective_mask_rate(self) -> float:
        """
        mask_rate, or the encoder default when unset.
        """
        return DEFAULT_MASK_RATE if self.mask_rate is None else self.mask_rate

    def with_encoder(self, encoder: EncoderConfig) -> "TrainConfig":
        """
        Take an unset mask_rate from the encoder section.
        """
        if self.mask_rate is not None:
            return self
        return replace(self, mask_rate=encoder.mask_rate)


@dataclass
class TokenizedCorpus:
    """
    Tokenized documents plus the vocabulary facts masking needs.
    """

    documents: list[list[int]]
    separator: int
    mask_id: int
    special_ids: frozenset[int]
    vocab_size: int

    @classmethod
    def from_texts(cls, texts: typing.Iterable[str], tokenizer: TokenizerModel) -> "TokenizedCorpus":
        """
        Encode one document per text, dropping documents that encode to nothing.
        """
        documents = [ids for ids in (encode(tokenizer, text) for text in texts) if ids]
        if not documents:
            raise EmptyCorpusError("pretraining corpus")
        return cls(
            documents=documents,
            separator=tokenizer.special_id("sep"),
            mask_id=tokenizer.special_id("mask"),
            special_ids=tokenizer.special_ids,
            vocab_size=tokenizer.vocab_size,
        )

    def _with(self, documents: list[list[int]]) -> "TokenizedCorpus":
        return TokenizedCorpus(documents, self.separator, self.mask_id, self.special_ids, self.vocab_size)

    def split(self, heldout_fraction: float, seed: int) -> tuple["TokenizedCorpus", "TokenizedCorpus | None"]:
        """
        Seeded document-level (train, held-out) split; held-out is None for a zero fraction.
        """
        count = math.ceil(heldout_fraction * len(self.documents)) if heldout_fraction > 0 else 0
        if count == 0:
            return self, None
        if count >= len(self.documents):
            raise ConfigErrorInvalidValue("heldout_fraction", heldout_fraction, "leaves no training documents")
        order = np.random.default_rng(derive_seed(seed, "heldout")).permutation(len(self.documents))
        heldout = sorted(order[:count].tolist())
        keep = sorted(order[count:].tolist())
        return self._with([self.documents[i] for i in keep]), self._with([self.documents[i] for i in heldout])

    def chunks(self, context: int) -> torch.Tensor:
        """
        Concatenate documents with the separator token and cut the stream into rows of `context` ids.

        A stream shorter than `context` comes back as one shorter row; a ragged tail is dropped.
        """
        stream: list[int] = []
        for i, doc in enumerate(self.documents):
            if i:
                stream.append(self.separator)
            stream.extend(doc)
        if len(stream) < context:
            warnings.warn(f"Corpus has {len(stream)} tokens, fewer than one chunk of {context}")
            logger.warning("corpus shorter than one %d-token chunk, using a single %d-token row", context, len(stream))
            return torch.tensor([stream], dtype=torch.long)
        rows = len(stream) // context
        return torch.tensor(stream[: rows * context], dtype=torch.long).reshape(rows, context)


@dataclass
class MaskedBatch:
    """
    Corrupted inputs, labels (original id at selected positions, IGNORE_INDEX elsewhere) and the number of rows
    that had nothing to mask.
    """

    inputs: torch.Tensor
    labels: torch.Tensor
    skipped: int

    @property
    def selected(self) -> int:
        """
        Number of labelled positions.
        """
        return int((self.labels != IGNORE_INDEX).sum())


def mask_batch(
    ids: torch.Tensor,
    config: TrainConfig,
    seed: int,
    *,
    mask_id: int,
    special_ids: typing.Collection[int],
    vocab_size: int,
) -> MaskedBatch:
    """
    Select every non-special position with probability mask_rate, then corrupt selected positions.

    ids: (batch, length). A row with maskable positions but no selection gets one position forced; a row without
    any maskable position is skipped (left unlabelled) and counted.
    """
    ids = torch.as_tensor(ids, dtype=torch.long)
    if ids.dim() == 1:
        ids = ids[None, :]
    generator = torch.Generator().manual_seed(seed)

    specials = torch.tensor(sorted(special_ids), dtype=torch.long)
    maskable = ~torch.isin(ids, specials)
    selected = (torch.rand(ids.shape, generator=generator, dtype=DTYPE) < config.effective_mask_rate) & maskable

    skipped = 0
    for row in range(ids.shape[0]):
        candidates = torch.nonzero(maskable[row]).flatten()
        if not len(candidates):
            skipped += 1
        elif not selected[row].any():
            pick = torch.randint(len(candidates), (1,), generator=generator)
            selected[row, candidates[pick]] = True

    action = torch.rand(ids.shape, generator=generator, dtype=DTYPE)
    replacement = torch.randint(vocab_size, ids.shape, generator=generator)
    to_mask = selected & (action < config.mask_token_fraction)
    to_random = selected & ~to_mask & (action < config.mask_token_fraction + config.random_token_fraction)

    inputs = ids.clone()
    inputs[to_mask] = mask_id
    inputs[to_random] = replacement[to_random]
    labels = torch.full_like(ids, IGNORE_INDEX)
    labels[selected] = ids[selected]

    if skipped:
        logger.debug("masking skipped %d of %d rows without maskable positions", skipped, ids.shape[0])
    return MaskedBatch(inputs=inputs, labels=labels, skipped=skipped)


@dataclass
class LossRecord:
    """
    Training loss of one optimizer step.
    """

    step: int
    stage: int
    loss: float


@dataclass
class Checkpoint:
    """
    Everything needed to continue training: parameters, optimizer moments, position in the schedule and history.

    `step` counts completed steps over both stages; `heldout` maps e.g. "stage1_start" to a held-out loss.
    """

    model: EncoderModel
    optimizer_state: dict[str, typing.Any] = field(default_factory=dict)
    step: int = 0
    stage: int = 1
    losses: list[LossRecord] = field(default_factory=list)
    heldout: dict[str, float] = field(default_factory=dict)
    skipped_rows: int = 0

    def save(self, path: str | Path) -> None:
        """
        Write an ENC1 container: model tensors, optimizer tensors under "optim.<param>.<key>", the rest as JSON.
        """
        tensors = model_state(self.model)
        optim_state = self.optimizer_state.get("state", {})
        for index, entries in optim_state.items():
            for key, value in entries.items():
                tensors[f"optim.{index}.{key}"] = torch.as_tensor(value, dtype=DTYPE)
        header = {
            "config": self.model.config.to_dict(),
            "checkpoint": {
                "step": self.step,
                "stage": self.stage,
                "losses": [[r.step, r.stage, r.loss] for r in self.losses],
                "heldout": self.heldout,
                "skipped_rows": self.skipped_rows,
                "param_groups": self.optimizer_state.get("param_groups", []),
            },
        }
        write_container(path, header, tensors)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        """
        Read a checkpoint written by `save`.
        """
        header, tensors = read_container(path)
        if "config" not in header or "checkpoint" not in header:
            raise CheckpointFormatError(str(path), "not a training checkpoint (missing config or checkpoint block)")
        meta = header["checkpoint"]
        model_tensors = {k: v for k, v in tensors.items() if not k.startswith("optim.")}
        model = model_from_state(EncoderConfig.load(header["config"]), model_tensors, str(path))

        state: dict[int, dict[str, torch.Tensor]] = {}
        for name, value in tensors.items():
            if name.startswith("optim."):
                _, index, key = name.split(".", 2)
                state.setdefault(int(index), {})[key] = value.to(torch.float32) if key == "step" else value
        optimizer_state = {"state": state, "param_groups": meta["param_groups"]} if meta["param_groups"] else {}

        return cls(
            model=model,
            optimizer_state=optimizer_state,
            step=meta["step"],
            stage=meta["stage"],
            losses=[LossRecord(int(s), int(st), float(v)) for s, st, v in meta["losses"]],
            heldout={k: float(v) for k, v in meta["heldout"].items()},
            skipped_rows=meta.get("skipped_rows", 0),
        )


def build_optimizer(model: EncoderModel, config: TrainConfig) -> torch.optim.AdamW:
    """
    AdamW over every parameter; the learning rate is set per step by the schedule.
    """
    return torch.optim.AdamW(
        model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay, foreach=False
    )


def average_mlm_loss(
    model: EncoderModel,
    chunks: torch.Tensor,
    config: TrainConfig,
    seed: int,
    *,
    mask_id: int,
    special_ids: typing.Collection[int],
    vocab_size: int,
) -> float:
    """
    Masked cross-entropy averaged over every labelled position of every chunk, with seeded masking.
    """
    config = config.with_encoder(model.config)
    total = 0.0
    count = 0
    with torch.no_grad():
        for start in range(0, len(chunks), config.eval_batch_size):
            batch = mask_batch(
                chunks[start : start + config.eval_batch_size],
                config,
                derive_seed(seed, "eval", start),
                mask_id=mask_id,
                special_ids=special_ids,
                vocab_size=vocab_size,
            )
            if not batch.selected:
                continue
            loss = mlm_loss(forward(model, batch.inputs), batch.labels)
            total += float(loss) * batch.selected
            count += batch.selected
    if not count:
        raise EmptyCorpusError("maskable evaluation tokens")
    return total / count


def _heldout_loss(model: EncoderModel, heldout: TokenizedCorpus, config: TrainConfig, stage: int) -> float:
    return average_mlm_loss(
        model,
        heldout.chunks(config.context_for(stage)),
        config,
        derive_seed(config.seed, "heldout", stage),
        mask_id=heldout.mask_id,
        special_ids=heldout.special_ids,
        vocab_size=heldout.vocab_size,
    )


def train_stage(
    start: EncoderModel | Checkpoint,
    corpus: TokenizedCorpus,
    config: TrainConfig,
    stage: int = 1,
    *,
    stop_at: int = None,
) -> Checkpoint:
    """
    Run (the rest of) one stage.

    Args:
        start: a fresh model, or a checkpoint to continue from (its optimizer moments are restored)
        corpus: the full corpus; the held-out slice is split off with `config.heldout_fraction`
        config: training settings
        stage: 1 (short context) or 2 (long context)
        stop_at: stop after this many global steps (used to produce mid-run checkpoints)
    """
    if stage not in STAGES:
        raise ConfigErrorInvalidValue("stage", stage, "must be 1 or 2")
    checkpoint = start if isinstance(start, Checkpoint) else Checkpoint(model=start)
    model = checkpoint.model
    config = config.with_encoder(model.config)
    context = config.context_for(stage)
    if context > model.config.max_context:
        raise SequenceTooLongError(context, model.config.max_context)

    train, heldout = corpus.split(config.heldout_fraction, config.seed)
    chunks = train.chunks(context)
    optimizer = build_optimizer(model, config)
    if checkpoint.optimizer_state:
        optimizer.load_state_dict(checkpoint.optimizer_state)

    first = config.first_step(stage)
    end = first + config.steps_for(stage)
    if stop_at is not None:
        end = min(end, stop_at)
    begin = max(checkpoint.step, first)

    if heldout is not None and f"stage{stage}_start" not in checkpoint.heldout:
        checkpoint.heldout[f"stage{stage}_start"] = _heldout_loss(model, heldout, config, stage)

    model.train()
    for step in tqdm(range(begin, end), desc=f"stage {stage}", disable=not config.progress, file=sys.stderr):
        generator = torch.Generator().manual_seed(derive_seed(config.seed, "batch", stage, step))
        rows = torch.randint(len(chunks), (config.batch_size,), generator=generator)
        batch = mask_batch(
            chunks[rows],
            config,
            derive_seed(config.seed, "mask", stage, step),
            mask_id=train.mask_id,
            special_ids=train.special_ids,
            vocab_size=train.vocab_size,
        )
        checkpoint.skipped_rows += batch.skipped
        if not batch.selected:
            # no optimizer step and no loss record; the schedule still moves on
            logger.warning("stage %d step %d: no maskable position in the batch, step skipped", stage, step + 1)
            checkpoint.step = step + 1
            continue

        loss = mlm_loss(forward(model, batch.inputs), batch.labels)
        if not torch.isfinite(loss):
            raise NonFiniteLossError(step=step, stage=stage, loss=float(loss))

        optimizer.zero_grad(set_to_none=True)
        loss.backward()  # type: ignore[no-untyped-call]
        if config.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
        for group in optimizer.param_groups:
            group["lr"] = config.learning_rate_at(step)
        optimizer.step()

        checkpoint.losses.append(LossRecord(step=step, stage=stage, loss=float(loss)))
        checkpoint.step = step + 1
        if (step + 1) % config.log_every == 0:
            logger.info("stage %d step %d: loss %.4f (lr %.2e)", stage, step + 1, float(loss), config.learning_rate_at(step))

    model.eval()
    checkpoint.stage = stage
    checkpoint.optimizer_state = optimizer.state_dict()
    if checkpoint.step == first + config.steps_for(stage) and heldout is not None:
        checkpoint.heldout[f"stage{stage}_end"] = _heldout_loss(model, heldout, config, stage)
        logger.info(
            "stage %d held-out loss %.4f -> %.4f",
            stage,
            checkpoint.heldout[f"stage{stage}_start"],
            checkpoint.heldout[f"stage{stage}_end"],
        )
    return checkpoint


def run_two_stage(start: EncoderModel | Checkpoint, corpus: TokenizedCorpus, config: TrainConfig) -> Checkpoint:
    """
    Stage 1 at the short context, then stage 2 at the long context on the same parameters.

    With zero stage-2 steps the stage-1 checkpoint is returned as is.
    """
    resume_stage = start.stage if isinstance(start, Checkpoint) else 1
    checkpoint = start
    if resume_stage == 1:
        checkpoint = train_stage(start, corpus, config, stage=1)
    if config.stage2_steps == 0:
        return typing.cast(Checkpoint, checkpoint)
    return train_stage(checkpoint, corpus, config, stage=2)


def write_losses(path: str | Path, losses: typing.Iterable[LossRecord]) -> None:
    """
    `step<TAB>stage<TAB>loss` with a header row.
    """
    write_tsv(path, [("step", "stage", "loss"), *((r.step, r.stage, repr(r.loss)) for r in losses)])


def write_heldout(path: str | Path, heldout: dict[str, float]) -> None:
    """
    Held-out losses as JSON.
    """
    Path(path).write_text(json.dumps(heldout, indent=2, sort_keys=True), encoding="utf-8")
