import pytest

import src.transmodern as transmodern
from src.transmodern.errors import ConfigErrorInvalidValue
from src.transmodern.synthetic import generate_documents, make_lexicon, planted_accuracy

SMALL = transmodern.ToyConfig(source_documents=5, target_documents=5, sentences_per_document=3, parallel_pairs=20)


def test_lexicon():
    lexicon = make_lexicon(SMALL)

    assert len(lexicon) == SMALL.lexicon_size == 4 * (12 + 6) + 10
    assert len({e.source for e in lexicon}) == len(lexicon)
    assert len({e.target for e in lexicon}) == len(lexicon)
    assert {e.topic for e in lexicon if e.kind == "verb"} == {-1}
    assert "the" not in {e.source for e in lexicon}


def test_make_toy_is_seeded():
    first = transmodern.make_toy(SMALL)
    second = transmodern.make_toy(SMALL)
    other = transmodern.make_toy(transmodern.ToyConfig(**(SMALL.to_dict() | {"seed": 1})))

    assert first.source_corpus == second.source_corpus
    assert first.parallel == second.parallel
    assert first.dictionary() != other.dictionary()


def test_documents():
    setup = transmodern.make_toy(SMALL)

    assert len(setup.source_corpus) == 5
    assert len(setup.target_corpus) == 5
    assert len(setup.parallel) == 20
    assert all(text.endswith(" .") for text in setup.source_corpus)
    # definite nouns carry the article prefix on the target side
    assert any(word.startswith("ال") for text in setup.target_corpus for word in text.split())

    with pytest.raises(ConfigErrorInvalidValue):
        generate_documents(setup.lexicon, SMALL, "middle", 1)


def test_parallel_pairs_follow_the_dictionary():
    setup = transmodern.make_toy(SMALL)
    dictionary = setup.dictionary()

    for target, source in setup.parallel.pairs:
        assert [dictionary[word] for word in target.split()] == source.split()
        assert 1 <= len(target.split()) <= SMALL.max_phrase_words


def test_save(tmp_path):
    setup = transmodern.make_toy(SMALL)

    files = setup.save(tmp_path / "toy")

    assert set(files) == {"source", "target", "parallel", "dictionary"}
    assert files["source"].read_text(encoding="utf-8").splitlines() == setup.source_corpus
    assert transmodern.ParallelCorpus.load(files["parallel"]) == setup.parallel
    rows = files["dictionary"].read_text(encoding="utf-8").splitlines()
    assert len(rows) == SMALL.lexicon_size
    assert rows[0].split("\t")[:2] == [setup.lexicon[0].target, setup.lexicon[0].source]


def test_planted_accuracy():
    dictionary = {"a": "x", "b": "y", "c": "z"}

    assert planted_accuracy({"a": "x", "b": "y", "c": "z"}, dictionary) == 1.0
    assert planted_accuracy({"a": "x", "b": "z"}, dictionary) == 0.5
    assert planted_accuracy({}, dictionary) == 0.0


def test_toy_config_validation():
    with pytest.raises(ConfigErrorInvalidValue):
        transmodern.ToyConfig(topics=0)

    with pytest.raises(ConfigErrorInvalidValue):
        transmodern.ToyConfig(verbs=5000)
