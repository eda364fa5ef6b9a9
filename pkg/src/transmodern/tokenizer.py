"""
Character-level byte-pair-encoding tokenizer with atomic special tokens.
"""

import json
import logging
import re
import typing
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    EmptyCorpusError,
    TokenIdOutOfRangeError,
    TokenizerFormatError,
    VocabularyTooSmallError,
)

logger = logging.getLogger(__name__)

# name -> surface; ids follow this order
DEFAULT_SPECIAL_TOKENS = {
    "cls": "[CLS]",
    "sep": "[SEP]",
    "mask": "[MASK]",
    "pad": "[PAD]",
    "unk": "[UNK]",
}

NORMALIZATIONS = ("none", "arabic")

_PIECE_RE = re.compile(r" ?[^ ]+| ")
_ARABIC_DIACRITICS_RE = re.compile("[ً-ْ]")
_ARABIC_CHAR_MAP = str.maketrans(
    {
        "أ": "ا",  # alef with hamza above
        "إ": "ا",  # alef with hamza below
        "آ": "ا",  # alef with madda
        "ٱ": "ا",  # alef wasla
        "ى": "ي",  # alef maqsura -> ya
        "ـ": None,  # tatweel
    }
)


def normalize(text: str, normalization: str = "none") -> str:
    """
    Collapse Unicode whitespace runs to single spaces and apply the optional script normalization.
    """
    if normalization == "arabic":
        text = _ARABIC_DIACRITICS_RE.sub("", text.translate(_ARABIC_CHAR_MAP))
    return " ".join(text.split())


def _escape(token: str) -> str:
    return token.replace("\\", "\\\\").replace(" ", "\\s")


def _unescape(token: str) -> str:
    return re.sub(r"\\(.)", lambda m: " " if m.group(1) == "s" else m.group(1), token)


@dataclass
class TokenizerModel:
    """
    Vocabulary, ordered merge rules and special tokens.

    Ids are contiguous: special tokens first (in `special_tokens` order), then the alphabet, then merge outputs.
    """

    vocab: dict[str, int]
    merges: list[tuple[str, str]]
    special_tokens: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_SPECIAL_TOKENS))
    normalization: str = "none"
    truncated: bool = False

    _id_to_token: list[str] = field(init=False, repr=False, compare=False)
    _ranks: dict[tuple[str, str], int] = field(init=False, repr=False, compare=False)
    _cache: dict[str, tuple[int, ...]] = field(init=False, repr=False, compare=False)
    _special_re: re.Pattern[str] | None = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        """
        Build the reverse vocabulary, merge ranks and the special-token splitter.
        """
        self._id_to_token = [""] * len(self.vocab)
        for token, idx in self.vocab.items():
            if not 0 <= idx < len(self.vocab):
                raise TokenIdOutOfRangeError(idx, len(self.vocab))
            self._id_to_token[idx] = token
        self._ranks = {}
        for rank, pair in enumerate(self.merges):
            self._ranks.setdefault(pair, rank)
        self._cache = {}
        surfaces = sorted(self.special_tokens.values(), key=len, reverse=True)
        self._special_re = re.compile("(" + "|".join(map(re.escape, surfaces)) + ")") if surfaces else None

    @property
    def vocab_size(self) -> int:
        """
        Number of entries in the vocabulary.
        """
        return len(self.vocab)

    def special_id(self, name: str) -> int:
        """
        Id of a named special token (cls, sep, mask, pad, unk).
        """
        return self.vocab[self.special_tokens[name]]

    @property
    def special_ids(self) -> frozenset[int]:
        """
        Ids of every special token.
        """
        return frozenset(self.vocab[s] for s in self.special_tokens.values())

    def id_to_token(self, idx: int) -> str:
        """
        Surface form of a token id.
        """
        if not 0 <= idx < self.vocab_size:
            raise TokenIdOutOfRangeError(idx, self.vocab_size)
        return self._id_to_token[idx]

    def split_specials(self, text: str) -> list[str]:
        """
        Cut special-token surfaces out of text; they come back as their own list items.
        """
        if self._special_re is None:
            return [text] if text else []
        return [part for part in self._special_re.split(text) if part]

    def encode_piece(self, piece: str) -> tuple[int, ...]:
        """
        Apply the merges, in training order, inside one pre-tokenized piece.
        """
        cached = self._cache.get(piece)
        if cached is not None:
            return cached

        symbols = list(piece)
        while len(symbols) > 1:
            ranked = [
                (self._ranks[pair], i)
                for i, pair in enumerate(zip(symbols, symbols[1:]))
                if pair in self._ranks
            ]
            if not ranked:
                break
            _, first = min(ranked)
            left, right = symbols[first], symbols[first + 1]
            merged: list[str] = []
            i = 0
            while i < len(symbols):
                if i < len(symbols) - 1 and symbols[i] == left and symbols[i + 1] == right:
                    merged.append(left + right)
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = merged

        unk = self.special_id("unk")
        ids = tuple(self.vocab.get(symbol, unk) for symbol in symbols)
        self._cache[piece] = ids
        return ids

    def to_json(self) -> dict[str, typing.Any]:
        """
        The serialized document: vocab, merges ("left right", spaces escaped as \\s), special tokens.
        """
        return {
            "vocab": self.vocab,
            "merges": [f"{_escape(left)} {_escape(right)}" for left, right in self.merges],
            "special_tokens": self.special_tokens,
            "normalization": self.normalization,
            "truncated": self.truncated,
        }

    def save(self, path: str | Path) -> None:
        """
        Write the tokenizer as a UTF-8 JSON document.
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, ensure_ascii=False, indent=1)

    @classmethod
    def load(cls, path: str | Path) -> "TokenizerModel":
        """
        Read a tokenizer written by `save`.
        """
        with Path(path).open("r", encoding="utf-8") as f:
            doc = json.load(f)
        try:
            merges = []
            for line in doc["merges"]:
                left, right = line.split(" ")
                merges.append((_unescape(left), _unescape(right)))
            return cls(
                vocab={str(k): int(v) for k, v in doc["vocab"].items()},
                merges=merges,
                special_tokens=dict(doc["special_tokens"]),
                normalization=doc.get("normalization", "none"),
                truncated=bool(doc.get("truncated", False)),
            )
        except (KeyError, ValueError) as e:
            raise TokenizerFormatError(str(path), str(e)) from e


def pre_tokenize(model: TokenizerModel, text: str) -> list[str]:
    """
    Normalize and split text into special tokens and word pieces (a word carries its leading space).
    """
    pieces: list[str] = []
    specials = set(model.special_tokens.values())
    for part in model.split_specials(normalize(text, model.normalization)):
        if part in specials:
            pieces.append(part)
        else:
            pieces.extend(_PIECE_RE.findall(part))
    return pieces


def _count_pieces(corpus: typing.Iterable[str], specials: dict[str, str], normalization: str) -> Counter[str]:
    surfaces = set(specials.values())
    # a merge-free model, only used for its special splitter and pre-tokenizer
    splitter = TokenizerModel(
        vocab={s: i for i, s in enumerate(specials.values())},
        merges=[],
        special_tokens=specials,
        normalization=normalization,
    )
    piece_counts: Counter[str] = Counter()
    for line in corpus:
        piece_counts.update(p for p in pre_tokenize(splitter, line) if p not in surfaces)
    if not piece_counts:
        raise EmptyCorpusError("tokenizer training corpus")
    return piece_counts


def train_bpe(
    corpus: typing.Iterable[str],
    vocab_size: int,
    special_tokens: dict[str, str] = None,
    normalization: str = "none",
) -> TokenizerModel:
    """
    Learn merges until the vocabulary reaches `vocab_size`.

    Among equally frequent pairs the lexicographically smallest (left, right) pair wins.
    When the corpus runs out of pairs first, the model is returned with `truncated=True` and a warning.
    """
    specials = dict(DEFAULT_SPECIAL_TOKENS if special_tokens is None else special_tokens)
    surfaces = set(specials.values())
    piece_counts = _count_pieces(corpus, specials, normalization)
    alphabet = sorted({ch for piece in piece_counts for ch in piece})
    minimum = len(specials) + len(alphabet)
    if vocab_size < minimum:
        raise VocabularyTooSmallError(vocab_size, minimum)

    vocab: dict[str, int] = {}
    for token in [*specials.values(), *alphabet]:
        vocab.setdefault(token, len(vocab))

    words = [list(piece) for piece in piece_counts]
    freqs = list(piece_counts.values())
    pair_counts: Counter[tuple[str, str]] = Counter()
    pair_words: defaultdict[tuple[str, str], set[int]] = defaultdict(set)

    def account(wi: int, sign: int) -> None:
        symbols = words[wi]
        for pair in zip(symbols, symbols[1:]):
            pair_counts[pair] += sign * freqs[wi]
            if sign > 0:
                pair_words[pair].add(wi)
            elif pair_counts[pair] <= 0:
                del pair_counts[pair]

    for wi in range(len(words)):
        account(wi, +1)

    merges: list[tuple[str, str]] = []
    truncated = False
    while len(vocab) < vocab_size:
        candidates = [pair for pair in pair_counts if pair[0] + pair[1] not in surfaces]
        if not candidates:
            truncated = True
            break
        best = min(candidates, key=lambda pair: (-pair_counts[pair], pair))
        merges.append(best)
        token = best[0] + best[1]
        vocab.setdefault(token, len(vocab))

        for wi in sorted(pair_words.pop(best, ())):
            symbols = words[wi]
            if not any(pair == best for pair in zip(symbols, symbols[1:])):
                continue
            account(wi, -1)
            merged: list[str] = []
            i = 0
            while i < len(symbols):
                if i < len(symbols) - 1 and symbols[i] == best[0] and symbols[i + 1] == best[1]:
                    merged.append(token)
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            words[wi] = merged
            account(wi, +1)
        pair_counts.pop(best, None)

    if truncated:
        message = f"Corpus ran out of pairs at {len(vocab)} tokens (requested {vocab_size})"
        warnings.warn(message)
        logger.warning(message)

    logger.info("trained BPE: %d tokens, %d merges", len(vocab), len(merges))
    return TokenizerModel(
        vocab=vocab,
        merges=merges,
        special_tokens=specials,
        normalization=normalization,
        truncated=truncated,
    )


def encode(model: TokenizerModel, text: str) -> list[int]:
    """
    Token ids for text; characters outside the alphabet become the unknown token.
    """
    ids: list[int] = []
    for piece in pre_tokenize(model, text):
        if piece in model.special_tokens.values():
            ids.append(model.vocab[piece])
        else:
            ids.extend(model.encode_piece(piece))
    return ids


def encode_words(model: TokenizerModel, words: typing.Sequence[str]) -> tuple[list[int], list[int]]:
    """
    Encode pre-split words (e.g. CoNLL tokens) as one space-joined text.

    Returns the ids and, per word, the index of its first token.
    """
    ids: list[int] = []
    starts: list[int] = []
    specials = set(model.special_tokens.values())
    for i, word in enumerate(words):
        word = normalize(word, model.normalization).replace(" ", "")
        starts.append(len(ids))
        if not word:
            ids.append(model.special_id("unk"))
        elif word in specials:
            ids.append(model.vocab[word])
        else:
            ids.extend(model.encode_piece(word if i == 0 else f" {word}"))
    return ids, starts


def decode(model: TokenizerModel, ids: typing.Iterable[int]) -> str:
    """
    Concatenate token surfaces; special tokens come back as their literal surface.
    """
    return "".join(model.id_to_token(int(i)) for i in ids)


@dataclass
class FertilityReport:
    """
    Tokens per whitespace word, overall and per word-length bucket.
    """

    ratio: float
    words: int
    tokens: int
    buckets: dict[int, float]


def fertility(model: TokenizerModel, corpus: typing.Iterable[str], max_bucket: int = 10) -> FertilityReport:
    """
    Average number of (non-whitespace) tokens each word is split into.

    Word lengths above `max_bucket` characters share the last bucket.
    """
    specials = set(model.special_tokens.values())
    words = tokens = 0
    bucket_words: Counter[int] = Counter()
    bucket_tokens: Counter[int] = Counter()
    for line in corpus:
        for piece in pre_tokenize(model, line):
            word = piece.strip()
            if not word or piece in specials:
                continue
            count = sum(1 for i in model.encode_piece(piece) if model.id_to_token(i).strip())
            bucket = min(len(word), max_bucket)
            words += 1
            tokens += count
            bucket_words[bucket] += 1
            bucket_tokens[bucket] += count

    if not words:
        raise EmptyCorpusError("fertility corpus")
    buckets = {b: bucket_tokens[b] / bucket_words[b] for b in sorted(bucket_words)}
    return FertilityReport(ratio=tokens / words, words=words, tokens=tokens, buckets=buckets)


def character_tokenizer(corpus: typing.Iterable[str], normalization: str = "none") -> TokenizerModel:
    """
    The zero-merge baseline: every character of the corpus is its own token.
    """
    lines = list(corpus)
    alphabet = {ch for piece in _count_pieces(lines, DEFAULT_SPECIAL_TOKENS, normalization) for ch in piece}
    return train_bpe(lines, len(DEFAULT_SPECIAL_TOKENS) + len(alphabet), normalization=normalization)


def fertility_comparison(
    models: typing.Mapping[str, TokenizerModel], corpus: typing.Iterable[str]
) -> dict[str, FertilityReport]:
    """
    Fertility of several tokenizers on the same corpus.
    """
    lines = list(corpus)
    return {name: fertility(model, lines) for name, model in models.items()}
