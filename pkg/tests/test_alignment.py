import pytest

import src.transmodern as transmodern
from src.transmodern.errors import ConfigErrorInvalidValue, EmptyCorpusError, TsvFormatError, VocabularyMismatchError
from src.transmodern.synthetic import planted_accuracy

from .constants import ALIGNMENT_FILE, PARALLEL_FILE


def _word_tokenizers(pairs):
    # big enough vocabularies turn every word into a single token
    with pytest.warns(UserWarning):
        tgt = transmodern.train_bpe([t for t, _ in pairs], 5000)
    with pytest.warns(UserWarning):
        src = transmodern.train_bpe([s for _, s in pairs], 5000)
    return tgt, src


def test_parallel_corpus(tmp_path):
    corpus = transmodern.ParallelCorpus.load(PARALLEL_FILE)
    assert len(corpus) == 2
    assert corpus.pairs[1] == ("ب", "b")

    corpus.save(tmp_path / "copy.tsv")
    assert transmodern.ParallelCorpus.load(tmp_path / "copy.tsv") == corpus

    with pytest.raises(EmptyCorpusError):
        transmodern.ParallelCorpus([("a", " ")])

    broken = tmp_path / "broken.tsv"
    broken.write_text("only one column\n")
    with pytest.raises(TsvFormatError):
        transmodern.ParallelCorpus.load(broken)


def test_forced_mass():
    corpus = transmodern.ParallelCorpus([("A", "x")] * 3)
    tgt, src = _word_tokenizers(corpus.pairs)

    table = transmodern.train_ibm1(corpus, tgt, src, iterations=3)

    assert table.prob(tgt.vocab["A"], src.vocab["x"]) == pytest.approx(1.0, abs=1e-12)


def test_two_word_dictionary():
    corpus = transmodern.ParallelCorpus([("A B", "x y"), ("A", "x")])
    tgt, src = _word_tokenizers(corpus.pairs)
    a, b = tgt.vocab["A"], tgt.vocab[" B"]
    x, y = src.vocab["x"], src.vocab[" y"]

    table = transmodern.train_ibm1(corpus, tgt, src, iterations=2)

    for row in table.probs.values():
        assert sum(row.values()) == pytest.approx(1.0, abs=1e-9)
    assert table.prob(a, x) > table.prob(b, x)
    assert table.prob(b, y) > table.prob(a, y)

    counts = transmodern.extract_counts(table, corpus, tgt, src)
    assert counts.argmax() == {a: x, b: y}
    assert counts.counts[a] == {x: 2.0}
    assert counts.counts[b] == {y: 1.0}
    # count conservation: one count per target token occurrence
    assert counts.total() == 3.0


def test_log_likelihood_never_decreases():
    corpus = transmodern.ParallelCorpus(
        [("A B C", "x y z"), ("A C", "x z"), ("B", "y"), ("C B", "z y"), ("A", "x")]
    )
    tgt, src = _word_tokenizers(corpus.pairs)

    table = transmodern.train_ibm1(corpus, tgt, src, iterations=5)

    history = table.log_likelihoods
    assert len(history) == 6
    for before, after in zip(history, history[1:]):
        assert after >= before - 1e-9


def test_single_pair_single_edge():
    corpus = transmodern.ParallelCorpus([("A", "x")])
    tgt, src = _word_tokenizers(corpus.pairs)

    counts = transmodern.extract_counts(transmodern.train_ibm1(corpus, tgt, src, 1), corpus, tgt, src)

    assert counts.counts == {tgt.vocab["A"]: {src.vocab["x"]: 1.0}}
    # tokens that never occur stay unaligned
    assert tgt.special_id("mask") not in counts.counts


def test_vocabulary_mismatch():
    corpus = transmodern.ParallelCorpus([("A", "qqq")])
    tgt, _ = _word_tokenizers(corpus.pairs)
    src = transmodern.train_bpe(["xy"], 8)

    with pytest.raises(VocabularyMismatchError):
        transmodern.train_ibm1(corpus, tgt, src)


def test_iterations_and_empty_corpus():
    corpus = transmodern.ParallelCorpus([("A", "x")])
    tgt, src = _word_tokenizers(corpus.pairs)

    with pytest.raises(ConfigErrorInvalidValue):
        transmodern.train_ibm1(corpus, tgt, src, iterations=0)

    with pytest.raises(EmptyCorpusError):
        transmodern.train_ibm1(transmodern.ParallelCorpus([]), tgt, src)


def test_alignment_table_file(tmp_path):
    table = transmodern.AlignmentTable.load(ALIGNMENT_FILE, 10, 10)
    assert table.counts == {5: {6: 3.0, 7: 1.0}, 8: {6: 2.0}}
    assert table.argmax() == {5: 6, 8: 6}

    path = tmp_path / "alignment.tsv"
    transmodern.AlignmentTable({9: {2: 1.0, 1: 4.0}, 3: {0: 0.0}}, 10, 10).save(path)
    # all-zero rows are dropped, rows come back sorted
    assert path.read_text().splitlines() == ["9\t1\t4.0", "9\t2\t1.0"]

    with pytest.raises(ConfigErrorInvalidValue):
        transmodern.AlignmentTable({1: {2: -1.0}}, 10, 10)


def test_argmax_ties_go_to_lowest_source_id():
    table = transmodern.AlignmentTable({0: {7: 2.0, 3: 2.0, 5: 1.0}}, 1, 8)

    assert table.argmax() == {0: 3}


def test_planted_dictionary_is_recovered():
    config = transmodern.ToyConfig(source_documents=1, target_documents=1, parallel_pairs=1500)
    setup = transmodern.make_toy(config)
    tgt, src = _word_tokenizers(setup.parallel.pairs)

    table = transmodern.train_ibm1(setup.parallel, tgt, src, iterations=5)
    counts = transmodern.extract_counts(table, setup.parallel, tgt, src)

    aligned = {tgt.id_to_token(t).strip(): src.id_to_token(s).strip() for t, s in counts.argmax().items()}
    assert set(setup.dictionary()) <= set(aligned)
    assert planted_accuracy(aligned, setup.dictionary()) == 1.0

    for before, after in zip(table.log_likelihoods, table.log_likelihoods[1:]):
        assert after >= before - 1e-9
