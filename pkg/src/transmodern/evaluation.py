"""
Evaluation protocols: MLM loss at a context length, dense retrieval, sentence(-pair) classification and NER.

Classification and NER train a single linear head on frozen encoder features; retrieval can optionally fine-tune
the encoder itself as a bi-encoder with in-batch negatives.
"""

import copy
import json
import logging
import math
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .accounting import AllocationMeter
from .config import TypedConfig
from .encoder import EncoderModel, encode_hidden
from .errors import (
    ConfigErrorInvalidValue,
    EmptyCorpusError,
    MetricRangeError,
    NoRelevantDocumentError,
    SequenceTooLongError,
    TsvFormatError,
    UnknownLabelError,
)
from .helpers import derive_seed, read_tsv, write_tsv
from .metrics import accuracy, cosine_matrix, entity_prf, first_relevant_rank, macro_f1, perplexity, retrieval_metrics
from .numerics import DTYPE
from .tokenizer import TokenizerModel, encode, encode_words
from .training import TokenizedCorpus, TrainConfig, average_mlm_loss

logger = logging.getLogger(__name__)

_UNIT_METRICS = ("recall", "mrr", "f1", "precision", "accuracy", "macro_f1")


def _check_metric(name: str, value: float) -> None:
    if not math.isfinite(value):
        raise MetricRangeError(name, value)
    base = name.split("@")[0].rsplit("/", 1)[-1]
    if base == "loss" and value < 0:
        raise MetricRangeError(name, value)
    if base == "perplexity" and value < 1.0:
        raise MetricRangeError(name, value)
    if base.startswith(_UNIT_METRICS) and not 0.0 <= value <= 1.0:
        raise MetricRangeError(name, value)


@dataclass
class EvalReport:
    """
    Metrics of one evaluation run.

    Metric names are plain (`loss`, `recall@5`, `macro_f1`) or prefixed with a split (`test/f1`); values are
    checked against their range on construction.
    """

    task: str
    metrics: dict[str, float]
    samples: int
    seeds: list[int] = field(default_factory=list)
    context_len: typing.Optional[int] = None
    details: dict[str, typing.Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        """
        Reject out-of-range metrics.
        """
        for name, value in self.metrics.items():
            _check_metric(name, value)

    def to_dict(self) -> dict[str, typing.Any]:
        """
        Plain data, as written by `save_json`.
        """
        return asdict(self)

    def save_json(self, path: str | Path) -> None:
        """
        Write the report as indented JSON.
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")

    def save_tsv(self, path: str | Path) -> None:
        """
        Write `metric<TAB>value` lines.
        """
        write_tsv(path, [("metric", "value"), *((k, repr(v)) for k, v in self.metrics.items())])

    def save(self, out_dir: str | Path, stem: str = None) -> None:
        """
        Write `<stem>.json` and `<stem>.tsv` into `out_dir`.
        """
        stem = stem or self.task
        self.save_json(Path(out_dir) / f"{stem}.json")
        self.save_tsv(Path(out_dir) / f"{stem}.tsv")


@dataclass
class HeadConfig(TypedConfig):
    """
    Settings for linear heads and bi-encoder fine-tuning.
    """

    epochs: int = 3
    learning_rate: float = 5e-3
    weight_decay: float = 0.0
    batch_size: int = 16
    # bi-encoder fine-tuning
    finetune_epochs: int = 0
    finetune_learning_rate: float = 1e-4
    temperature: float = 0.05
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])

    def __post_init__(self) -> None:
        """
        Basic range checks.
        """
        for key in ("epochs", "batch_size"):
            if getattr(self, key) < 1:
                raise ConfigErrorInvalidValue(key, getattr(self, key), "must be >= 1")
        if self.finetune_epochs < 0:
            raise ConfigErrorInvalidValue("finetune_epochs", self.finetune_epochs, "must be >= 0")
        if self.learning_rate <= 0 or self.temperature <= 0:
            raise ConfigErrorInvalidValue("learning_rate/temperature", (self.learning_rate, self.temperature), "> 0")
        if not self.seeds:
            raise ConfigErrorInvalidValue("seeds", self.seeds, "need at least one seed")


# --- masked language modelling ---


def eval_mlm(
    model: EncoderModel,
    corpus: TokenizedCorpus,
    context_len: int,
    config: TrainConfig,
    seed: int,
) -> EvalReport:
    """
    Average masked cross-entropy over seeded masking of `context_len`-token chunks, plus perplexity.

    Score-allocation totals of the run are attached to `details["allocations"]`.
    """
    if context_len > model.config.max_context:
        raise SequenceTooLongError(context_len, model.config.max_context)
    chunks = corpus.chunks(context_len)
    with AllocationMeter().measure() as record:
        loss = average_mlm_loss(
            model,
            chunks,
            config,
            derive_seed(seed, "eval_mlm", context_len),
            mask_id=corpus.mask_id,
            special_ids=corpus.special_ids,
            vocab_size=corpus.vocab_size,
        )
    logger.info("MLM at context %d: loss %.4f, perplexity %.2f", context_len, loss, perplexity(loss))
    return EvalReport(
        task="mlm",
        metrics={"loss": loss, "perplexity": perplexity(loss)},
        samples=int(chunks.numel()),
        seeds=[seed],
        context_len=context_len,
        details={
            "allocations": dict(record.totals),
            "peak_allocations": dict(record.peaks),
            "chunks": len(chunks),
        },
    )


# --- sentence vectors ---


def _sentence_ids(model: EncoderModel, tokenizer: TokenizerModel, text: str) -> list[int]:
    if not text.strip():
        raise EmptyCorpusError("text to encode")
    ids = encode(tokenizer, text)[: model.config.max_context]
    if not ids:
        raise EmptyCorpusError("text to encode")
    return ids


def _pooled(model: EncoderModel, ids: list[int]) -> torch.Tensor:
    return encode_hidden(model, torch.tensor(ids, dtype=torch.long)).mean(dim=0)


def encode_sentence(model: EncoderModel, tokenizer: TokenizerModel, text: str) -> np.ndarray:
    """
    Mean-pooled final hidden states (dimension = hidden); text longer than max_context is truncated.
    """
    ids = _sentence_ids(model, tokenizer, text)
    with torch.no_grad():
        return _pooled(model, ids).numpy().copy()


def encode_sentences(model: EncoderModel, tokenizer: TokenizerModel, texts: typing.Iterable[str]) -> np.ndarray:
    """
    `encode_sentence` for every text, stacked into (texts, hidden).
    """
    vectors = [encode_sentence(model, tokenizer, text) for text in texts]
    if not vectors:
        raise EmptyCorpusError("texts to encode")
    return np.stack(vectors)


# --- retrieval ---


@dataclass
class RetrievalData:
    """
    Queries and documents by id, and the relevant document ids per query.
    """

    queries: dict[str, str]
    documents: dict[str, str]
    qrels: dict[str, set[str]]

    @classmethod
    def load(cls, queries: str | Path, documents: str | Path, qrels: str | Path) -> "RetrievalData":
        """
        Read `qid<TAB>text`, `did<TAB>text` and `qid<TAB>did` files.
        """
        relevant: dict[str, set[str]] = {}
        for qid, did in read_tsv(qrels, 2):
            relevant.setdefault(qid, set()).add(did)
        return cls(
            queries={qid: text for qid, text in read_tsv(queries, 2)},
            documents={did: text for did, text in read_tsv(documents, 2)},
            qrels=relevant,
        )

    def training_pairs(self) -> list[tuple[str, str]]:
        """
        (query text, relevant document text) for every qrel whose ids both exist.
        """
        return [
            (self.queries[qid], self.documents[did])
            for qid in sorted(self.qrels)
            for did in sorted(self.qrels[qid])
            if qid in self.queries and did in self.documents
        ]


def finetune_bi_encoder(
    model: EncoderModel,
    tokenizer: TokenizerModel,
    pairs: typing.Sequence[tuple[str, str]],
    config: HeadConfig,
    seed: int,
) -> EncoderModel:
    """
    Contrastive fine-tuning on (query, document) pairs with in-batch negatives.

    Similarities are cosine / temperature; each query's positive is the document on the diagonal. Returns a tuned
    copy, the input model is left untouched.
    """
    tuned = copy.deepcopy(model)
    if config.finetune_epochs == 0 or len(pairs) < 2:
        return tuned
    optimizer = torch.optim.AdamW(
        tuned.parameters(), lr=config.finetune_learning_rate, weight_decay=config.weight_decay, foreach=False
    )
    generator = torch.Generator().manual_seed(derive_seed(seed, "bi_encoder"))
    last = math.nan
    tuned.train()
    for epoch in range(config.finetune_epochs):
        order = torch.randperm(len(pairs), generator=generator).tolist()
        for start in range(0, len(order), config.batch_size):
            batch = [pairs[i] for i in order[start : start + config.batch_size]]
            if len(batch) < 2:
                continue
            q = torch.stack([_pooled(tuned, _sentence_ids(tuned, tokenizer, a)) for a, _ in batch])
            d = torch.stack([_pooled(tuned, _sentence_ids(tuned, tokenizer, b)) for _, b in batch])
            logits = F.normalize(q, dim=-1) @ F.normalize(d, dim=-1).T / config.temperature
            loss = F.cross_entropy(logits, torch.arange(len(batch)))
            optimizer.zero_grad(set_to_none=True)
            loss.backward()  # type: ignore[no-untyped-call]
            optimizer.step()
            last = float(loss)
        logger.info("bi-encoder epoch %d: last batch loss %.4f", epoch + 1, last)
    tuned.eval()
    return tuned


def retrieval_eval(
    data: RetrievalData,
    model: EncoderModel,
    tokenizer: TokenizerModel,
    ks: typing.Iterable[int] = (1, 5, 10),
) -> EvalReport:
    """
    Rank every document per query by cosine similarity; Recall@k and MRR of the first relevant document.
    """
    doc_ids = list(data.documents)
    index = {did: i for i, did in enumerate(doc_ids)}
    query_ids = list(data.queries)
    for qid in query_ids:
        if not any(did in index for did in data.qrels.get(qid, ())):
            raise NoRelevantDocumentError(qid)

    scores = cosine_matrix(
        encode_sentences(model, tokenizer, (data.queries[q] for q in query_ids)),
        encode_sentences(model, tokenizer, (data.documents[d] for d in doc_ids)),
    )
    ranks = [
        first_relevant_rank(scores[i], {index[d] for d in data.qrels[qid] if d in index})
        for i, qid in enumerate(query_ids)
    ]
    metrics = retrieval_metrics(ranks, ks)
    logger.info("retrieval over %d queries / %d documents: %s", len(query_ids), len(doc_ids), metrics)
    return EvalReport(task="retrieval", metrics=metrics, samples=len(query_ids), details={"ranks": ranks})


# --- linear heads ---


def train_linear_head(
    features: torch.Tensor,
    targets: torch.Tensor,
    num_labels: int,
    config: HeadConfig,
    seed: int,
) -> nn.Linear:
    """
    One affine projection trained with AdamW and cross-entropy on frozen (rows, hidden) features.
    """
    generator = torch.Generator().manual_seed(derive_seed(seed, "head"))
    head = nn.Linear(features.shape[-1], num_labels, dtype=DTYPE)
    with torch.no_grad():
        head.weight.normal_(0.0, 0.02, generator=generator)
        head.bias.zero_()
    optimizer = torch.optim.AdamW(
        head.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay, foreach=False
    )
    for _ in range(config.epochs):
        order = torch.randperm(len(features), generator=generator)
        for start in range(0, len(order), config.batch_size):
            rows = order[start : start + config.batch_size]
            loss = F.cross_entropy(head(features[rows]), targets[rows])
            optimizer.zero_grad(set_to_none=True)
            loss.backward()  # type: ignore[no-untyped-call]
            optimizer.step()
    return head


@dataclass
class LabeledTexts:
    """
    Labelled single texts or text pairs.
    """

    labels: list[str]
    texts: list[tuple[str, ...]]

    def __post_init__(self) -> None:
        """
        Labels and texts line up; every item has one or two texts.
        """
        if len(self.labels) != len(self.texts):
            raise ConfigErrorInvalidValue("texts", len(self.texts), f"expected {len(self.labels)} items")
        if not self.labels:
            raise EmptyCorpusError("labelled texts")

    @classmethod
    def load(cls, path: str | Path) -> "LabeledTexts":
        """
        Read `label<TAB>text` or `label<TAB>text_a<TAB>text_b` lines.
        """
        labels, texts = [], []
        for line_no, fields in enumerate(read_tsv(path, 2, at_least=True), start=1):
            if len(fields) > 3:
                raise TsvFormatError(str(path), line_no, f"expected 2 or 3 fields, got {len(fields)}")
            labels.append(fields[0])
            texts.append(tuple(fields[1:]))
        return cls(labels, texts)

    def joined(self, tokenizer: TokenizerModel) -> list[str]:
        """
        Pair items become `text_a [SEP] text_b`.
        """
        sep = f" {tokenizer.special_tokens['sep']} "
        return [sep.join(parts) for parts in self.texts]


def classify_eval(
    model: EncoderModel,
    tokenizer: TokenizerModel,
    train: LabeledTexts,
    test: LabeledTexts,
    config: HeadConfig,
) -> EvalReport:
    """
    Train a linear head on pooled sentence vectors per seed; report accuracy and macro-F1 averaged over seeds.
    """
    label_set = sorted(set(train.labels))
    label_ids = {label: i for i, label in enumerate(label_set)}
    for label in test.labels:
        if label not in label_ids:
            raise UnknownLabelError(label, label_set)

    train_x = torch.from_numpy(encode_sentences(model, tokenizer, train.joined(tokenizer)))
    test_x = torch.from_numpy(encode_sentences(model, tokenizer, test.joined(tokenizer)))
    train_y = torch.tensor([label_ids[label] for label in train.labels], dtype=torch.long)

    per_seed: dict[str, dict[str, float]] = {}
    for seed in config.seeds:
        head = train_linear_head(train_x, train_y, len(label_set), config, seed)
        with torch.no_grad():
            predicted = [label_set[i] for i in head(test_x).argmax(dim=-1).tolist()]
        per_seed[str(seed)] = {
            "accuracy": accuracy(test.labels, predicted),
            "macro_f1": macro_f1(test.labels, predicted, label_set),
        }

    metrics = {name: float(np.mean([m[name] for m in per_seed.values()])) for name in ("accuracy", "macro_f1")}
    logger.info("classification over %d test items: %s", len(test.labels), metrics)
    return EvalReport(
        task="classification",
        metrics=metrics,
        samples=len(test.labels),
        seeds=list(config.seeds),
        details={"per_seed": per_seed, "labels": label_set},
    )


# --- named entity recognition ---


@dataclass
class LabeledSpanSequence:
    """
    Words with one BIO tag each.
    """

    tokens: list[str]
    tags: list[str]

    def __post_init__(self) -> None:
        """
        One tag per token.
        """
        if len(self.tokens) != len(self.tags):
            raise ConfigErrorInvalidValue("tags", len(self.tags), f"expected {len(self.tokens)} tags")


def read_conll(path: str | Path) -> list[LabeledSpanSequence]:
    """
    `token<SPACE>tag` lines, sentences separated by blank lines.
    """
    sentences: list[LabeledSpanSequence] = []
    tokens: list[str] = []
    tags: list[str] = []
    with Path(path).open("r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                if tokens:
                    sentences.append(LabeledSpanSequence(tokens, tags))
                    tokens, tags = [], []
                continue
            parts = line.split()
            if len(parts) < 2:
                raise TsvFormatError(str(path), line_no, "expected 'token tag'")
            tokens.append(parts[0])
            tags.append(parts[-1])
    if tokens:
        sentences.append(LabeledSpanSequence(tokens, tags))
    return sentences


def word_features(
    model: EncoderModel, tokenizer: TokenizerModel, sentences: typing.Sequence[LabeledSpanSequence]
) -> list[torch.Tensor]:
    """
    Final hidden state of each word's first subword, one (words, hidden) tensor per sentence.
    """
    features = []
    with torch.no_grad():
        for sentence in sentences:
            ids, starts = encode_words(tokenizer, sentence.tokens)
            hidden = encode_hidden(model, torch.tensor(ids, dtype=torch.long))
            features.append(hidden[starts])
    return features


def _predict_tags(head: nn.Linear, features: list[torch.Tensor], tag_set: list[str]) -> list[list[str]]:
    with torch.no_grad():
        return [[tag_set[i] for i in head(f).argmax(dim=-1).tolist()] for f in features]


def ner_eval(
    model: EncoderModel,
    tokenizer: TokenizerModel,
    train: typing.Sequence[LabeledSpanSequence],
    test: typing.Sequence[LabeledSpanSequence],
    config: HeadConfig,
    validation: typing.Sequence[LabeledSpanSequence] = None,
) -> EvalReport:
    """
    Token head on first-subword features, trained once per seed; entity-level P/R/F1 averaged over seeds.

    With a validation split the report carries `validation/*` next to `test/*` metrics.
    """
    if not train or not test:
        raise EmptyCorpusError("NER train/test sentences")
    tag_set = sorted({tag for s in train for tag in s.tags} | {"O"})
    tag_ids = {tag: i for i, tag in enumerate(tag_set)}

    train_x = torch.cat(word_features(model, tokenizer, train))
    # malformed training tags are kept as classes of their own
    train_y = torch.tensor([tag_ids[tag] for s in train for tag in s.tags], dtype=torch.long)
    splits = {"test": test, **({"validation": validation} if validation else {})}
    split_features = {name: word_features(model, tokenizer, data) for name, data in splits.items()}

    per_seed: dict[str, dict[str, float]] = {}
    for seed in config.seeds:
        head = train_linear_head(train_x, train_y, len(tag_set), config, seed)
        scores = {}
        for name, data in splits.items():
            predicted = _predict_tags(head, split_features[name], tag_set)
            p, r, f1 = entity_prf([s.tags for s in data], predicted)
            scores |= {f"{name}/precision": p, f"{name}/recall": r, f"{name}/f1": f1}
        per_seed[str(seed)] = scores

    names = next(iter(per_seed.values())).keys()
    metrics = {name: float(np.mean([s[name] for s in per_seed.values()])) for name in names}
    logger.info("NER over %d test sentences: %s", len(test), metrics)
    return EvalReport(
        task="ner",
        metrics=metrics,
        samples=len(test),
        seeds=list(config.seeds),
        details={"per_seed": per_seed, "tags": tag_set},
    )
