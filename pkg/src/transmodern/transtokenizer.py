"""
Transtokenized embedding initialization.

Each target token's embedding is the alignment-count weighted mean of the source embeddings it aligned to.
Tokens without alignments copy a fallback source row (digits, punctuation, special tokens) and everything
else gets a seeded random row matched to the source matrix statistics.
"""

import enum
import logging
import string
import struct
import typing
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .alignment import AlignmentTable
from .errors import (
    EmbeddingFormatError,
    FallbackTokenMissingError,
    ShapeMismatchError,
    SourceIdOutOfRangeError,
)
from .helpers import read_tsv, write_tsv
from .tokenizer import TokenizerModel

if typing.TYPE_CHECKING:  # pragma: nocover
    from .encoder import EncoderModel

logger = logging.getLogger(__name__)

MAGIC = b"EMB1"


class Provenance(enum.IntEnum):
    """
    How an embedding row was initialized.
    """

    ALIGNED = 0
    FALLBACK = 1
    RANDOM_BACKOFF = 2


@dataclass
class EmbeddingMatrix:
    """
    Dense vocab x hidden float64 matrix with a provenance tag per row.
    """

    values: np.ndarray
    provenance: np.ndarray

    def __post_init__(self) -> None:
        """
        Coerce dtypes and check that every row has exactly one tag.
        """
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        self.provenance = np.ascontiguousarray(self.provenance, dtype=np.uint8)
        if self.values.ndim != 2:
            raise ShapeMismatchError("embedding values", (-1, -1), tuple(self.values.shape))
        if self.provenance.shape != (self.rows,):
            raise ShapeMismatchError("provenance tags", (self.rows,), tuple(self.provenance.shape))

    @property
    def rows(self) -> int:
        """
        Vocabulary size.
        """
        return int(self.values.shape[0])

    @property
    def dim(self) -> int:
        """
        Hidden size.
        """
        return int(self.values.shape[1])

    @classmethod
    def from_model(cls, model: "EncoderModel") -> "EmbeddingMatrix":
        """
        Export a model's input embeddings together with the provenance they were initialized with.
        """
        values = model.embeddings.detach().cpu().numpy().copy()
        return cls(values, model.embedding_provenance.cpu().numpy().copy())

    def save(self, path: str | Path) -> None:
        """
        Write "EMB1", rows and dim (u64 little-endian), row-major f64 values, then one provenance byte per row.
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<QQ", self.rows, self.dim))
            f.write(self.values.astype("<f8").tobytes())
            f.write(self.provenance.tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingMatrix":
        """
        Read a matrix written by `save`.
        """
        raw = Path(path).read_bytes()
        if raw[:4] != MAGIC:
            raise EmbeddingFormatError(str(path), "missing EMB1 magic")
        if len(raw) < 20:
            raise EmbeddingFormatError(str(path), "truncated header")
        rows, dim = struct.unpack_from("<QQ", raw, 4)
        expected = 20 + rows * dim * 8 + rows
        if len(raw) != expected:
            raise EmbeddingFormatError(str(path), f"expected {expected} bytes, found {len(raw)}")
        values = np.frombuffer(raw, dtype="<f8", count=rows * dim, offset=20).reshape(rows, dim)
        provenance = np.frombuffer(raw, dtype=np.uint8, count=rows, offset=20 + rows * dim * 8)
        if provenance.size and provenance.max() > max(Provenance):
            raise EmbeddingFormatError(str(path), "unknown provenance tag")
        return cls(values.astype(np.float64), provenance.copy())


@dataclass
class FallbackMap:
    """
    Direct target id -> source id mappings used when a token has no alignment counts.
    """

    entries: dict[int, int]

    @classmethod
    def from_tokens(
        cls,
        pairs: typing.Iterable[tuple[str, str]],
        tgt: TokenizerModel,
        src: TokenizerModel,
    ) -> "FallbackMap":
        """
        Resolve (target surface, source surface) pairs to ids.

        A source surface missing from the source vocabulary is an error; a target surface the target
        vocabulary lacks is skipped with a warning.
        """
        entries: dict[int, int] = {}
        for target_token, source_token in pairs:
            if source_token not in src.vocab:
                raise FallbackTokenMissingError(target_token, source_token)
            if target_token not in tgt.vocab:
                warnings.warn(f"Fallback target token '{target_token}' is not in the target vocabulary")
                continue
            entries[tgt.vocab[target_token]] = src.vocab[source_token]
        return cls(entries)

    @staticmethod
    def read_pairs(path: str | Path) -> list[tuple[str, str]]:
        """
        Read a `target_token<TAB>source_token` TSV file.
        """
        return [(t, s) for t, s in read_tsv(path, 2)]

    @classmethod
    def load(cls, path: str | Path, tgt: TokenizerModel, src: TokenizerModel) -> "FallbackMap":
        """
        Read and resolve a fallback TSV file.
        """
        return cls.from_tokens(cls.read_pairs(path), tgt, src)

    @staticmethod
    def save_pairs(path: str | Path, pairs: typing.Iterable[tuple[str, str]]) -> None:
        """
        Write surface pairs in the format `read_pairs` reads.
        """
        write_tsv(path, pairs)


_ARABIC_INDIC_DIGITS = "٠١٢٣٤٥٦٧٨٩"
_ARABIC_PUNCTUATION = {"،": ",", "؛": ";", "؟": "?", "٪": "%"}


def default_fallback_pairs() -> list[tuple[str, str]]:
    """
    The shipped fallback list: digits, punctuation and their Arabic-script counterparts.

    Each entry also appears with a leading space, since words carry their leading space as part of the token.
    """
    base: list[tuple[str, str]] = [(d, d) for d in string.digits]
    base += [(a, d) for a, d in zip(_ARABIC_INDIC_DIGITS, string.digits, strict=True)]
    base += [(p, p) for p in string.punctuation]
    base += list(_ARABIC_PUNCTUATION.items())
    return base + [(f" {t}", f" {s}") for t, s in base]


def default_fallback_map(tgt: TokenizerModel, src: TokenizerModel) -> FallbackMap:
    """
    Default fallback entries present in both vocabularies, plus the special tokens mapped by name.
    """
    pairs = [(t, s) for t, s in default_fallback_pairs() if t in tgt.vocab and s in src.vocab]
    pairs += [
        (surface, src.special_tokens[name])
        for name, surface in tgt.special_tokens.items()
        if name in src.special_tokens
    ]
    return FallbackMap.from_tokens(pairs, tgt, src)


def init_embeddings(
    table: AlignmentTable,
    src_emb: EmbeddingMatrix,
    fallback: FallbackMap,
    tgt: TokenizerModel,
    seed: int,
) -> EmbeddingMatrix:
    """
    Initialize one row per target token.

    aligned:        e(t) = sum_i c(t -> s_i) / sum_j c(t -> s_j) * e(s_i)
    fallback:       copy of the mapped source row
    random-backoff: N(0, std(src_emb)) drawn in token-id order from a generator seeded with `seed`
    """
    for source_id in [s for row in table.counts.values() for s in row] + list(fallback.entries.values()):
        if not 0 <= source_id < src_emb.rows:
            raise SourceIdOutOfRangeError(source_id, src_emb.rows)

    rows = tgt.vocab_size
    values = np.zeros((rows, src_emb.dim), dtype=np.float64)
    provenance = np.full(rows, Provenance.RANDOM_BACKOFF, dtype=np.uint8)
    std = float(src_emb.values.std()) if src_emb.values.size else 0.0
    rng = np.random.default_rng(seed)

    for target_id in range(rows):
        counts = table.counts.get(target_id, {})
        total = sum(counts.values())
        if total > 0:
            source_ids = list(counts)
            weights = np.array([counts[s] for s in source_ids], dtype=np.float64) / total
            values[target_id] = weights @ src_emb.values[source_ids]
            provenance[target_id] = Provenance.ALIGNED
        elif target_id in fallback.entries:
            values[target_id] = src_emb.values[fallback.entries[target_id]]
            provenance[target_id] = Provenance.FALLBACK
        else:
            values[target_id] = rng.normal(0.0, std, size=src_emb.dim)

    emb = EmbeddingMatrix(values, provenance)
    report = coverage_report(emb)
    logger.info(
        "transtokenized %d rows: %.1f%% aligned, %.1f%% fallback, %.1f%% random-backoff",
        rows,
        100 * report.fractions[Provenance.ALIGNED],
        100 * report.fractions[Provenance.FALLBACK],
        100 * report.fractions[Provenance.RANDOM_BACKOFF],
    )
    return emb


def random_embeddings(rows: int, like: EmbeddingMatrix, seed: int) -> EmbeddingMatrix:
    """
    Random-backoff rows for every token: the embedding re-initialized ablation.
    """
    std = float(like.values.std()) if like.values.size else 0.0
    rng = np.random.default_rng(seed)
    values = rng.normal(0.0, std, size=(rows, like.dim))
    return EmbeddingMatrix(values, np.full(rows, Provenance.RANDOM_BACKOFF, dtype=np.uint8))


@dataclass
class CoverageReport:
    """
    Row counts and fractions per provenance tag.
    """

    counts: dict[Provenance, int]
    fractions: dict[Provenance, float]
    random_backoff_tokens: list[str]


def coverage_report(emb: EmbeddingMatrix, tgt: TokenizerModel = None) -> CoverageReport:
    """
    How the rows of a matrix were initialized; lists random-backoff surfaces when a tokenizer is given.
    """
    counts = {tag: int((emb.provenance == tag).sum()) for tag in Provenance}
    fractions = {tag: (count / emb.rows if emb.rows else 0.0) for tag, count in counts.items()}
    backoff = []
    if tgt is not None:
        backoff = [tgt.id_to_token(int(i)) for i in np.flatnonzero(emb.provenance == Provenance.RANDOM_BACKOFF)]
    return CoverageReport(counts=counts, fractions=fractions, random_backoff_tokens=backoff)
