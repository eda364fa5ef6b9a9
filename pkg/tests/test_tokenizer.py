import pytest

import src.transmodern as transmodern
from src.transmodern.errors import EmptyCorpusError, TokenIdOutOfRangeError, TokenizerFormatError, VocabularyTooSmallError
from src.transmodern.tokenizer import (
    DEFAULT_SPECIAL_TOKENS,
    character_tokenizer,
    encode_words,
    fertility_comparison,
    normalize,
)

from .constants import ENGLISH_LINES

SPECIALS = len(DEFAULT_SPECIAL_TOKENS)


def test_single_merge():
    # alphabet: " ", "a", "b"
    model = transmodern.train_bpe(["aaab aaab"], SPECIALS + 3 + 1)

    assert model.merges == [("a", "a")]
    assert model.vocab_size == SPECIALS + 4
    assert not model.truncated

    ids = transmodern.encode(model, "aaab")
    assert [model.id_to_token(i) for i in ids] == ["aa", "a", "b"]


def test_zero_merges_is_character_level():
    model = transmodern.train_bpe(["aaab aaab"], SPECIALS + 3)

    assert model.merges == []
    assert [model.id_to_token(i) for i in transmodern.encode(model, "aab")] == ["a", "a", "b"]


def test_repeated_word_becomes_one_token():
    # merges: ab, abc, abcd, " abcd"
    model = transmodern.train_bpe(["abcd abcd", "abcd"], SPECIALS + 5 + 4)

    ids = transmodern.encode(model, "abcd")
    assert len(ids) == 1
    assert model.id_to_token(ids[0]) == "abcd"


def test_ids_are_contiguous_and_specials_first():
    model = transmodern.train_bpe(ENGLISH_LINES, 60)

    assert sorted(model.vocab.values()) == list(range(model.vocab_size))
    assert [model.special_id(name) for name in DEFAULT_SPECIAL_TOKENS] == list(range(SPECIALS))
    for left, right in model.merges:
        assert left + right in model.vocab


def test_training_is_deterministic():
    first = transmodern.train_bpe(ENGLISH_LINES, 60)
    second = transmodern.train_bpe(list(ENGLISH_LINES), 60)

    assert first == second


def test_truncated_vocabulary_warns():
    with pytest.warns(UserWarning, match="ran out of pairs"):
        model = transmodern.train_bpe(["ab"], 1000)

    assert model.truncated
    assert model.vocab_size == SPECIALS + 3


def test_too_small_and_empty():
    with pytest.raises(VocabularyTooSmallError):
        transmodern.train_bpe(["abc"], SPECIALS + 2)

    with pytest.raises(EmptyCorpusError):
        transmodern.train_bpe(["", "   "], 100)


def test_encode_decode():
    model = transmodern.train_bpe(ENGLISH_LINES, 60)

    assert transmodern.encode(model, "") == []
    assert transmodern.decode(model, []) == ""

    for line in ENGLISH_LINES:
        assert transmodern.decode(model, transmodern.encode(model, line)) == line

    # whitespace is normalized before encoding
    assert transmodern.decode(model, transmodern.encode(model, "the  red\tsky ")) == "the red sky"


def test_special_tokens_are_atomic():
    model = transmodern.train_bpe(ENGLISH_LINES, 60)
    mask = model.special_id("mask")

    ids = transmodern.encode(model, "the [MASK] sky")
    assert mask in ids
    assert ids.count(mask) == 1
    assert transmodern.decode(model, [mask]) == "[MASK]"
    assert "[MASK]" not in [model.id_to_token(i) for i in ids if i != mask]


def test_unknown_characters():
    model = transmodern.train_bpe(ENGLISH_LINES, 60)
    unk = model.special_id("unk")

    assert transmodern.encode(model, "zzz") == [unk, unk, unk]


def test_decode_out_of_range():
    model = transmodern.train_bpe(ENGLISH_LINES, 60)

    with pytest.raises(TokenIdOutOfRangeError):
        transmodern.decode(model, [model.vocab_size])


def test_encode_words_marks_first_subword():
    model = transmodern.train_bpe(ENGLISH_LINES, 60)

    ids, starts = encode_words(model, ["the", "apple", "[SEP]", "tree"])

    assert starts[0] == 0
    assert starts == sorted(starts)
    assert ids[starts[2]] == model.special_id("sep")
    assert transmodern.decode(model, ids) == "the apple[SEP] tree"


def test_arabic_normalization():
    assert normalize("أحمد  إلى", "arabic") == "احمد الي"
    assert normalize("كـتـاب", "arabic") == "كتاب"
    assert normalize("كِتَابٌ", "arabic") == "كتاب"
    assert normalize("أحمد", "none") == "أحمد"

    model = transmodern.train_bpe(["احمد الي"], 40, normalization="arabic")
    unk = model.special_id("unk")
    assert unk not in transmodern.encode(model, "أحمد إلى")


def test_save_and_load(tmp_path):
    model = transmodern.train_bpe(ENGLISH_LINES, 60)
    path = tmp_path / "tok.json"
    model.save(path)

    loaded = transmodern.TokenizerModel.load(path)
    assert loaded == model
    assert transmodern.encode(loaded, ENGLISH_LINES[0]) == transmodern.encode(model, ENGLISH_LINES[0])

    broken = tmp_path / "broken.json"
    broken.write_text('{"vocab": {}}')
    with pytest.raises(TokenizerFormatError):
        transmodern.TokenizerModel.load(broken)


def test_fertility():
    word_level = transmodern.train_bpe(["abcd abcd", "abcd"], SPECIALS + 9)
    assert transmodern.fertility(word_level, ["abcd abcd"]).ratio == 1.0

    chars = character_tokenizer(["abc abc"])
    report = transmodern.fertility(chars, ["abc abc"])
    assert report.ratio == 3.0
    assert report.words == 2
    assert report.buckets == {3: 3.0}

    with pytest.raises(EmptyCorpusError):
        transmodern.fertility(chars, [" "])


def test_trained_tokenizer_fragments_less_than_characters():
    setup = transmodern.make_toy(transmodern.ToyConfig(source_documents=5, target_documents=60, parallel_pairs=10))
    corpus = setup.target_corpus

    reports = fertility_comparison(
        {
            "bpe": transmodern.train_bpe(corpus, 300, normalization="arabic"),
            "characters": character_tokenizer(corpus, normalization="arabic"),
        },
        corpus,
    )

    assert reports["bpe"].ratio < reports["characters"].ratio
    assert reports["bpe"].ratio >= 1.0
