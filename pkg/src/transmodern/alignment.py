"""
IBM Model 1 alignment between target-tokenizer and source-tokenizer tokens.

The trained translation table p(t|s) is turned into Viterbi alignment counts c(t -> s), which weight the
source embeddings during transtokenization.
"""

import logging
import math
import typing
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigErrorInvalidValue, EmptyCorpusError, TsvFormatError, VocabularyMismatchError
from .helpers import read_tsv, write_tsv
from .tokenizer import TokenizerModel, encode

logger = logging.getLogger(__name__)


@dataclass
class ParallelCorpus:
    """
    (target sentence, source sentence) pairs.
    """

    pairs: list[tuple[str, str]]

    def __post_init__(self) -> None:
        """
        Both sides of every pair must contain text.
        """
        for i, (target, source) in enumerate(self.pairs):
            if not target.strip():
                raise EmptyCorpusError(f"target side of parallel pair {i}")
            if not source.strip():
                raise EmptyCorpusError(f"source side of parallel pair {i}")

    def __len__(self) -> int:
        """
        Number of sentence pairs.
        """
        return len(self.pairs)

    @classmethod
    def load(cls, path: str | Path) -> "ParallelCorpus":
        """
        Read a UTF-8 TSV file with one `target<TAB>source` pair per line.
        """
        try:
            return cls([(target, source) for target, source in read_tsv(path, 2)])
        except EmptyCorpusError as e:
            raise TsvFormatError(str(path), 0, str(e)) from e

    def save(self, path: str | Path) -> None:
        """
        Write the pairs in the format `load` reads.
        """
        write_tsv(path, self.pairs)


@dataclass
class TranslationTable:
    """
    p(target token | source token), one distribution per source token.

    `log_likelihoods` holds the corpus log-likelihood before the first EM update and after every update.
    """

    probs: dict[int, dict[int, float]]
    log_likelihoods: list[float] = field(default_factory=list)

    def prob(self, target_id: int, source_id: int) -> float:
        """
        p(t|s), zero for pairs that never co-occurred.
        """
        return self.probs.get(source_id, {}).get(target_id, 0.0)

    def best_source(self, target_id: int, source_ids: typing.Iterable[int]) -> int:
        """
        Viterbi choice among a sentence's source tokens; ties go to the lowest source id.
        """
        return min(source_ids, key=lambda s: (-self.prob(target_id, s), s))


@dataclass
class AlignmentTable:
    """
    Alignment counts c(t -> s): target id -> source id -> count.

    Targets without any positive count are absent (unaligned).
    """

    counts: dict[int, dict[int, float]]
    target_vocab_size: int
    source_vocab_size: int

    def __post_init__(self) -> None:
        """
        Reject negative counts and drop all-zero rows.
        """
        cleaned: dict[int, dict[int, float]] = {}
        for target_id, row in self.counts.items():
            for source_id, count in row.items():
                if count < 0:
                    raise ConfigErrorInvalidValue(f"counts[{target_id}][{source_id}]", count, "counts must be >= 0")
            kept = {s: c for s, c in row.items() if c > 0}
            if kept:
                cleaned[target_id] = kept
        self.counts = cleaned

    def total(self) -> float:
        """
        Sum of every count (= aligned target-token occurrences).
        """
        return sum(sum(row.values()) for row in self.counts.values())

    def argmax(self) -> dict[int, int]:
        """
        Most-counted source token per aligned target token (ties: lowest source id).
        """
        return {t: min(row, key=lambda s: (-row[s], s)) for t, row in self.counts.items()}

    def save(self, path: str | Path) -> None:
        """
        Write `target_id<TAB>source_id<TAB>count` lines sorted by (target_id, source_id).
        """
        write_tsv(
            path,
            (
                (t, s, repr(float(self.counts[t][s])))
                for t in sorted(self.counts)
                for s in sorted(self.counts[t])
            ),
        )

    @classmethod
    def load(cls, path: str | Path, target_vocab_size: int, source_vocab_size: int) -> "AlignmentTable":
        """
        Read a table written by `save`.
        """
        counts: defaultdict[int, dict[int, float]] = defaultdict(dict)
        for line_no, (t, s, c) in enumerate(read_tsv(path, 3), start=1):
            try:
                counts[int(t)][int(s)] = float(c)
            except ValueError as e:
                raise TsvFormatError(str(path), line_no, str(e)) from e
        return cls(dict(counts), target_vocab_size, source_vocab_size)


def _tokenize_side(
    texts: typing.Iterable[str], tokenizer: TokenizerModel, side: str, max_unknown_rate: float
) -> list[list[int]]:
    unk = tokenizer.special_id("unk")
    sentences = [encode(tokenizer, text) for text in texts]
    total = sum(len(s) for s in sentences)
    unknown = sum(1 for s in sentences for i in s if i == unk)
    rate = unknown / total if total else 1.0
    if rate > max_unknown_rate:
        raise VocabularyMismatchError(side, rate, max_unknown_rate)
    return sentences


def tokenize_corpus(
    corpus: ParallelCorpus,
    tgt: TokenizerModel,
    src: TokenizerModel,
    max_unknown_rate: float = 0.5,
) -> tuple[list[list[int]], list[list[int]]]:
    """
    Token ids of both sides, after checking that each tokenizer covers its side.
    """
    if not len(corpus):
        raise EmptyCorpusError("parallel corpus")
    targets = _tokenize_side((t for t, _ in corpus.pairs), tgt, "target", max_unknown_rate)
    sources = _tokenize_side((s for _, s in corpus.pairs), src, "source", max_unknown_rate)
    return targets, sources


def _e_step(
    probs: dict[int, dict[int, float]],
    targets: list[list[int]],
    sources: list[list[int]],
) -> tuple[dict[int, dict[int, float]], dict[int, float], float]:
    counts: defaultdict[int, defaultdict[int, float]] = defaultdict(lambda: defaultdict(float))
    totals: defaultdict[int, float] = defaultdict(float)
    log_likelihood = 0.0
    for target, source in zip(targets, sources, strict=True):
        for t in target:
            denom = sum(probs[s][t] for s in source)
            log_likelihood += math.log(denom / len(source))
            for s in source:
                share = probs[s][t] / denom
                counts[s][t] += share
                totals[s] += share
    return counts, totals, log_likelihood


def train_ibm1(
    corpus: ParallelCorpus,
    tgt: TokenizerModel,
    src: TokenizerModel,
    iterations: int = 5,
    *,
    max_unknown_rate: float = 0.5,
) -> TranslationTable:
    """
    Expectation-maximization for IBM Model 1 (no NULL token), generating target tokens from source tokens.

    Starts from the uniform p(t|s) = 1 / target vocab size over co-occurring pairs.
    """
    if iterations < 1:
        raise ConfigErrorInvalidValue("iterations", iterations, "at least one EM iteration is required")
    targets, sources = tokenize_corpus(corpus, tgt, src, max_unknown_rate)

    uniform = 1.0 / tgt.vocab_size
    probs: dict[int, dict[int, float]] = defaultdict(dict)
    for target, source in zip(targets, sources, strict=True):
        for s in source:
            row = probs[s]
            for t in target:
                row[t] = uniform

    history = []
    for iteration in range(iterations):
        counts, totals, log_likelihood = _e_step(probs, targets, sources)
        history.append(log_likelihood)
        probs = {s: {t: c / totals[s] for t, c in row.items()} for s, row in counts.items()}
        logger.debug("IBM1 iteration %d: log-likelihood %.6f", iteration + 1, log_likelihood)

    history.append(_e_step(probs, targets, sources)[2])
    logger.info(
        "IBM1 trained on %d pairs, %d iterations: log-likelihood %.4f -> %.4f",
        len(corpus),
        iterations,
        history[0],
        history[-1],
    )
    return TranslationTable(probs=dict(probs), log_likelihoods=history)


def extract_counts(
    table: TranslationTable,
    corpus: ParallelCorpus,
    tgt: TokenizerModel,
    src: TokenizerModel,
    *,
    max_unknown_rate: float = 0.5,
) -> AlignmentTable:
    """
    Every target-token occurrence adds one count to its Viterbi source token in the paired sentence.
    """
    targets, sources = tokenize_corpus(corpus, tgt, src, max_unknown_rate)
    counts: defaultdict[int, defaultdict[int, float]] = defaultdict(lambda: defaultdict(float))
    for target, source in zip(targets, sources, strict=True):
        for t in target:
            counts[t][table.best_source(t, source)] += 1.0
    alignment = AlignmentTable(
        {t: dict(row) for t, row in counts.items()},
        target_vocab_size=tgt.vocab_size,
        source_vocab_size=src.vocab_size,
    )
    logger.info("extracted %d alignment counts for %d target tokens", int(alignment.total()), len(alignment.counts))
    return alignment
