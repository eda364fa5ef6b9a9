"""
Metric arithmetic: perplexity, Recall@k / MRR, accuracy, macro-F1 and entity-level F1 over BIO tags.
"""

import logging
import math
import typing
import warnings

import numpy as np

from .errors import ConfigErrorInvalidValue, UnknownLabelError

logger = logging.getLogger(__name__)

Span = tuple[str, int, int]


def perplexity(loss: float) -> float:
    """
    exp(mean cross-entropy).
    """
    return math.exp(loss)


def cosine_matrix(queries: np.ndarray, documents: np.ndarray) -> np.ndarray:
    """
    Cosine similarity of every query row against every document row.
    """
    q = np.asarray(queries, dtype=np.float64)
    d = np.asarray(documents, dtype=np.float64)
    q = q / np.maximum(np.linalg.norm(q, axis=1, keepdims=True), 1e-12)
    d = d / np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-12)
    return q @ d.T


def first_relevant_rank(scores: np.ndarray, relevant: typing.Collection[int]) -> int:
    """
    1-based rank of the best-ranked relevant document; equal scores keep document order.
    """
    order = np.argsort(-np.asarray(scores), kind="stable")
    hits = np.flatnonzero(np.isin(order, list(relevant)))
    if not hits.size:
        raise ConfigErrorInvalidValue("relevant", sorted(relevant), "no relevant document among the scores")
    return int(hits[0]) + 1


def retrieval_metrics(ranks: typing.Sequence[int], ks: typing.Iterable[int] = (1, 5, 10)) -> dict[str, float]:
    """
    Recall@k for every k and MRR, from the rank of each query's first relevant document.

    >>> retrieval_metrics([1, 4], ks=[1, 5])
    {'recall@1': 0.5, 'recall@5': 1.0, 'mrr': 0.625}
    """
    r = np.asarray(ranks, dtype=np.int64)
    if not r.size or (r < 1).any():
        raise ConfigErrorInvalidValue("ranks", list(ranks), "need at least one rank, all >= 1")
    metrics = {f"recall@{k}": float(np.mean(r <= k)) for k in sorted(set(ks))}
    metrics["mrr"] = float(np.mean(1.0 / r))
    return metrics


def accuracy(gold: typing.Sequence[typing.Hashable], predicted: typing.Sequence[typing.Hashable]) -> float:
    """
    Fraction of exact matches.
    """
    if len(gold) != len(predicted) or not gold:
        raise ConfigErrorInvalidValue("predicted", len(predicted), f"expected {len(gold)} (> 0) predictions")
    return sum(g == p for g, p in zip(gold, predicted, strict=True)) / len(gold)


def per_class_f1(
    gold: typing.Sequence[typing.Hashable],
    predicted: typing.Sequence[typing.Hashable],
    labels: typing.Iterable[typing.Hashable] = None,
) -> dict[typing.Hashable, float]:
    """
    F1 per class over `labels` (default: gold labels union predicted labels); classes without support score 0.
    """
    if len(gold) != len(predicted):
        raise ConfigErrorInvalidValue("predicted", len(predicted), f"expected {len(gold)} predictions")
    classes = list(labels) if labels is not None else sorted(set(gold) | set(predicted), key=str)
    if labels is not None:
        for label in set(gold) | set(predicted):
            if label not in classes:
                raise UnknownLabelError(str(label), [str(c) for c in classes])

    scores = {}
    for c in classes:
        tp = sum(g == c and p == c for g, p in zip(gold, predicted, strict=True))
        fp = sum(g != c and p == c for g, p in zip(gold, predicted, strict=True))
        fn = sum(g == c and p != c for g, p in zip(gold, predicted, strict=True))
        scores[c] = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    return scores


def macro_f1(
    gold: typing.Sequence[typing.Hashable],
    predicted: typing.Sequence[typing.Hashable],
    labels: typing.Iterable[typing.Hashable] = None,
) -> float:
    """
    Unweighted mean of per-class F1.
    """
    scores = per_class_f1(gold, predicted, labels)
    return float(np.mean(list(scores.values()))) if scores else 0.0


def _split_tag(tag: str) -> tuple[str, str] | None:
    if tag == "O":
        return "O", ""
    prefix, sep, kind = tag.partition("-")
    if not sep or prefix not in ("B", "I") or not kind:
        return None
    return prefix, kind


def repair_bio(tags: typing.Sequence[str]) -> list[str]:
    """
    Make a tag sequence well-formed.

    An I-X without a preceding B-X/I-X becomes B-X; a tag that is not O, B-X or I-X becomes O (with a warning).
    """
    repaired: list[str] = []
    previous = "O"
    for tag in tags:
        parts = _split_tag(tag)
        if parts is None:
            warnings.warn(f"Malformed BIO tag '{tag}' treated as O")
            logger.warning("malformed BIO tag %r treated as O", tag)
            tag = "O"
        elif parts[0] == "I" and previous not in (f"B-{parts[1]}", f"I-{parts[1]}"):
            tag = f"B-{parts[1]}"
        repaired.append(tag)
        previous = tag
    return repaired


def bio_spans(tags: typing.Sequence[str]) -> set[Span]:
    """
    Typed entity spans (type, start, end) with an inclusive end, decoded after `repair_bio`.

    >>> sorted(bio_spans(["B-PER", "I-PER", "O", "B-LOC"]))
    [('LOC', 3, 3), ('PER', 0, 1)]
    """
    spans: set[Span] = set()
    current: list[typing.Any] | None = None
    for i, tag in enumerate(repair_bio(tags)):
        if tag.startswith("I-") and current is not None:
            current[2] = i
            continue
        if current is not None:
            spans.add((current[0], current[1], current[2]))
            current = None
        if tag.startswith("B-"):
            current = [tag[2:], i, i]
    if current is not None:
        spans.add((current[0], current[1], current[2]))
    return spans


def entity_prf(
    gold: typing.Sequence[typing.Sequence[str]],
    predicted: typing.Sequence[typing.Sequence[str]],
) -> tuple[float, float, float]:
    """
    Entity-level precision, recall and F1 over exact (type, start, end) matches, pooled over sentences.

    Two empty span sets agree perfectly (1.0 for all three).
    """
    if len(gold) != len(predicted):
        raise ConfigErrorInvalidValue("predicted", len(predicted), f"expected {len(gold)} tag sequences")
    gold_spans = {(i, *s) for i, tags in enumerate(gold) for s in bio_spans(tags)}
    pred_spans = {(i, *s) for i, tags in enumerate(predicted) for s in bio_spans(tags)}
    if not gold_spans and not pred_spans:
        return 1.0, 1.0, 1.0
    correct = len(gold_spans & pred_spans)
    precision = correct / len(pred_spans) if pred_spans else 0.0
    recall = correct / len(gold_spans) if gold_spans else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1
