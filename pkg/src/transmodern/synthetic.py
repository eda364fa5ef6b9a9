"""
Desk-scale toy data: a pseudo-English source language, an Arabic-script target language and a planted dictionary.

Both languages share topics and sentence templates, but the target marks definiteness with a "ال" prefix, attaches
"و" (and) to the following noun and puts adjectives after their noun. The parallel corpus pairs short
dictionary phrases, so IBM Model 1 alignments can be checked against the planted dictionary.
"""

import logging
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .alignment import ParallelCorpus
from .config import TypedConfig
from .errors import ConfigErrorInvalidValue
from .helpers import derive_seed, write_tsv

logger = logging.getLogger(__name__)

SOURCE_SYLLABLES = ("ka", "lo", "mi", "ru", "te", "sa", "no", "vi", "pa", "de", "fu", "gi", "bo", "ze", "ha", "ly")
TARGET_SYLLABLES = ("با", "تي", "سو", "كا", "لي", "مو", "نا", "ري", "دو", "فا", "جي", "هو", "زا", "قي", "شو", "كو")
KINDS = ("noun", "adjective", "verb")


@dataclass
class ToyConfig(TypedConfig):
    """
    Sizes of the generated toy setup.
    """

    topics: int = 4
    nouns_per_topic: int = 12
    adjectives_per_topic: int = 6
    verbs: int = 10
    source_documents: int = 1500
    target_documents: int = 1500
    sentences_per_document: int = 10
    parallel_pairs: int = 5000
    max_phrase_words: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        """
        Everything must be positive, and the syllable inventory must cover the lexicon.
        """
        for key in ("topics", "nouns_per_topic", "adjectives_per_topic", "verbs", "source_documents",
                    "target_documents", "sentences_per_document", "parallel_pairs", "max_phrase_words"):
            if getattr(self, key) < 1:
                raise ConfigErrorInvalidValue(key, getattr(self, key), "must be >= 1")
        if self.lexicon_size > len(SOURCE_SYLLABLES) ** 3:
            raise ConfigErrorInvalidValue("lexicon", self.lexicon_size, "too many words for the syllable inventory")

    @property
    def lexicon_size(self) -> int:
        """
        Number of dictionary entries.
        """
        return self.topics * (self.nouns_per_topic + self.adjectives_per_topic) + self.verbs


@dataclass(frozen=True)
class DictionaryEntry:
    """
    One planted translation pair; verbs have topic -1 (shared by all topics).
    """

    source: str
    target: str
    kind: str
    topic: int


def _words(rng: np.random.Generator, syllables: tuple[str, ...], count: int, taken: set[str]) -> list[str]:
    words: list[str] = []
    while len(words) < count:
        size = int(rng.integers(2, 4))
        word = "".join(syllables[int(i)] for i in rng.integers(len(syllables), size=size))
        if word not in taken:
            taken.add(word)
            words.append(word)
    return words


def make_lexicon(config: ToyConfig) -> list[DictionaryEntry]:
    """
    Random but seeded one-to-one dictionary between the two languages.
    """
    rng = np.random.default_rng(derive_seed(config.seed, "toy", "lexicon"))
    source_taken = {"the", "and"}
    target_taken: set[str] = set()
    entries: list[DictionaryEntry] = []

    def add(kind: str, topic: int, count: int) -> None:
        for s, t in zip(_words(rng, SOURCE_SYLLABLES, count, source_taken),
                        _words(rng, TARGET_SYLLABLES, count, target_taken), strict=True):
            entries.append(DictionaryEntry(source=s, target=t, kind=kind, topic=topic))

    for topic in range(config.topics):
        add("noun", topic, config.nouns_per_topic)
        add("adjective", topic, config.adjectives_per_topic)
    add("verb", -1, config.verbs)
    return entries


class _Vocabulary:
    def __init__(self, lexicon: list[DictionaryEntry]):
        self.by_topic: dict[tuple[int, str], list[DictionaryEntry]] = {}
        for entry in lexicon:
            self.by_topic.setdefault((entry.topic, entry.kind), []).append(entry)

    def pick(self, rng: np.random.Generator, topic: int, kind: str) -> DictionaryEntry:
        options = self.by_topic[(-1 if kind == "verb" else topic, kind)]
        return options[int(rng.integers(len(options)))]


def _sentence(rng: np.random.Generator, vocabulary: _Vocabulary, topic: int) -> tuple[str, str]:
    noun = vocabulary.pick(rng, topic, "noun")
    other = vocabulary.pick(rng, topic, "noun")
    adjective = vocabulary.pick(rng, topic, "adjective")
    verb = vocabulary.pick(rng, topic, "verb")
    template = int(rng.integers(3))
    if template == 0:
        source = f"the {adjective.source} {noun.source} {verb.source} the {other.source} ."
        target = f"ال{noun.target} ال{adjective.target} {verb.target} ال{other.target} ."
    elif template == 1:
        source = f"the {noun.source} {verb.source} the {adjective.source} {other.source} ."
        target = f"ال{noun.target} {verb.target} ال{other.target} ال{adjective.target} ."
    else:
        source = f"{noun.source} and {other.source} {verb.source} ."
        target = f"{noun.target} و{other.target} {verb.target} ."
    return source, target


def generate_documents(
    lexicon: list[DictionaryEntry], config: ToyConfig, side: str, documents: int
) -> list[str]:
    """
    Single-topic documents of template sentences in one language (`side` is "source" or "target").
    """
    if side not in ("source", "target"):
        raise ConfigErrorInvalidValue("side", side, "source or target")
    rng = np.random.default_rng(derive_seed(config.seed, "toy", side))
    vocabulary = _Vocabulary(lexicon)
    texts = []
    for _ in range(documents):
        topic = int(rng.integers(config.topics))
        sentences = [_sentence(rng, vocabulary, topic) for _ in range(config.sentences_per_document)]
        texts.append(" ".join(s if side == "source" else t for s, t in sentences))
    return texts


def generate_parallel(lexicon: list[DictionaryEntry], config: ToyConfig) -> ParallelCorpus:
    """
    (target phrase, source phrase) pairs of 1..max_phrase_words dictionary words in the same order.
    """
    rng = np.random.default_rng(derive_seed(config.seed, "toy", "parallel"))
    pairs = []
    for _ in range(config.parallel_pairs):
        size = int(rng.integers(1, config.max_phrase_words + 1))
        picks = [lexicon[int(i)] for i in rng.choice(len(lexicon), size=min(size, len(lexicon)), replace=False)]
        pairs.append((" ".join(e.target for e in picks), " ".join(e.source for e in picks)))
    return ParallelCorpus(pairs)


@dataclass
class ToySetup:
    """
    Everything the toy ablation needs besides the pretrained source model.
    """

    lexicon: list[DictionaryEntry]
    source_corpus: list[str]
    target_corpus: list[str]
    parallel: ParallelCorpus
    files: dict[str, Path] = field(default_factory=dict)

    def dictionary(self) -> dict[str, str]:
        """
        Planted target word -> source word.
        """
        return {e.target: e.source for e in self.lexicon}

    def save(self, out_dir: str | Path) -> dict[str, Path]:
        """
        Write source.txt, target.txt, parallel.tsv and dictionary.tsv; returns the paths by name.
        """
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.files = {
            "source": out / "source.txt",
            "target": out / "target.txt",
            "parallel": out / "parallel.tsv",
            "dictionary": out / "dictionary.tsv",
        }
        self.files["source"].write_text("\n".join(self.source_corpus) + "\n", encoding="utf-8")
        self.files["target"].write_text("\n".join(self.target_corpus) + "\n", encoding="utf-8")
        self.parallel.save(self.files["parallel"])
        write_tsv(self.files["dictionary"], ((e.target, e.source, e.kind, e.topic) for e in self.lexicon))
        return self.files


def make_toy(config: ToyConfig = None) -> ToySetup:
    """
    Generate the full toy setup from one seed.
    """
    config = config or ToyConfig()
    lexicon = make_lexicon(config)
    setup = ToySetup(
        lexicon=lexicon,
        source_corpus=generate_documents(lexicon, config, "source", config.source_documents),
        target_corpus=generate_documents(lexicon, config, "target", config.target_documents),
        parallel=generate_parallel(lexicon, config),
    )
    size = sum(len(t.encode("utf-8")) + 1 for t in setup.target_corpus)
    logger.info(
        "toy setup: %d dictionary entries, %d/%d source/target documents (%.2f MB target), %d parallel pairs",
        len(lexicon),
        len(setup.source_corpus),
        len(setup.target_corpus),
        size / 1e6,
        len(setup.parallel),
    )
    return setup


def planted_accuracy(
    argmax: typing.Mapping[str, str], dictionary: typing.Mapping[str, str]
) -> float:
    """
    Fraction of planted target words whose aligned source word is the planted translation.
    """
    checked = [target for target in dictionary if target in argmax]
    if not checked:
        return 0.0
    return sum(argmax[t] == dictionary[t] for t in checked) / len(checked)
