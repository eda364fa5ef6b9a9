import math

import numpy as np
import pytest

from src.transmodern.errors import ConfigErrorInvalidValue, UnknownLabelError
from src.transmodern.metrics import (
    accuracy,
    bio_spans,
    cosine_matrix,
    entity_prf,
    first_relevant_rank,
    macro_f1,
    per_class_f1,
    perplexity,
    repair_bio,
    retrieval_metrics,
)


def test_perplexity():
    assert perplexity(0.0) == 1.0
    assert round(perplexity(3.24), 2) == 25.53
    assert 21.0 <= perplexity(3.05) <= 21.2
    assert round(perplexity(3.05), 2) == 21.12
    assert perplexity(math.log(50280)) == pytest.approx(50280)


def test_cosine_matrix():
    v = np.random.default_rng(0).normal(size=(4, 7))

    scores = cosine_matrix(v, v)

    assert np.max(np.abs(np.diag(scores) - 1.0)) < 1e-12
    assert np.all(np.abs(scores) <= 1.0 + 1e-12)
    assert cosine_matrix(np.array([[1.0, 0.0]]), np.array([[0.0, 2.0], [-3.0, 0.0]])).tolist() == [[0.0, -1.0]]


def test_first_relevant_rank():
    scores = np.array([0.1, 0.9, 0.5, 0.9])

    assert first_relevant_rank(scores, {1}) == 1
    # equal scores keep document order
    assert first_relevant_rank(scores, {3}) == 2
    assert first_relevant_rank(scores, {0, 2}) == 3

    with pytest.raises(ConfigErrorInvalidValue):
        first_relevant_rank(scores, {7})


def test_retrieval_metrics():
    assert retrieval_metrics([1, 4], ks=[1, 5, 10]) == {"recall@1": 0.5, "recall@5": 1.0, "recall@10": 1.0, "mrr": 0.625}
    assert retrieval_metrics([1, 1, 1]) == {"recall@1": 1.0, "recall@5": 1.0, "recall@10": 1.0, "mrr": 1.0}

    with pytest.raises(ConfigErrorInvalidValue):
        retrieval_metrics([])
    with pytest.raises(ConfigErrorInvalidValue):
        retrieval_metrics([0, 2])


def test_retrieval_metrics_are_monotone():
    rng = np.random.default_rng(1)
    for _ in range(20):
        metrics = retrieval_metrics(rng.integers(1, 30, size=12).tolist())
        assert metrics["recall@1"] <= metrics["recall@5"] <= metrics["recall@10"]
        assert metrics["mrr"] >= metrics["recall@1"]
        assert all(0.0 <= value <= 1.0 for value in metrics.values())


def test_accuracy_and_macro_f1():
    gold, pred = [1, 1, 0, 0], [1, 0, 0, 0]

    assert accuracy(gold, pred) == 0.75
    assert per_class_f1(gold, pred) == {0: 0.8, 1: pytest.approx(2 / 3)}
    assert abs(macro_f1(gold, pred) - 0.7333333333333333) < 1e-9

    assert accuracy(gold, gold) == 1.0
    assert macro_f1(gold, gold) == 1.0
    assert accuracy(["x", "x"], ["x", "x"]) == 1.0

    with pytest.raises(ConfigErrorInvalidValue):
        accuracy([1], [])


def test_macro_f1_relabeling_and_unseen_classes():
    gold, pred = ["a", "a", "b", "c", "c"], ["a", "b", "b", "c", "a"]
    relabel = {"a": "z", "b": "y", "c": "x"}

    assert macro_f1(gold, pred) == pytest.approx(macro_f1([relabel[g] for g in gold], [relabel[p] for p in pred]))

    # a declared class absent from gold and predictions contributes 0
    assert macro_f1([0, 1], [0, 1], labels=[0, 1, 2]) == pytest.approx(2 / 3)

    with pytest.raises(UnknownLabelError):
        macro_f1([0, 3], [0, 1], labels=[0, 1])


def test_repair_bio():
    assert repair_bio(["O", "I-PER", "I-PER", "B-LOC", "I-PER"]) == ["O", "B-PER", "I-PER", "B-LOC", "B-PER"]

    with pytest.warns(UserWarning, match="Malformed"):
        assert repair_bio(["X-PER", "B-"]) == ["O", "O"]


def test_bio_spans():
    assert bio_spans(["B-PER", "I-PER", "O", "B-LOC"]) == {("PER", 0, 1), ("LOC", 3, 3)}
    assert bio_spans(["B-PER", "B-PER"]) == {("PER", 0, 0), ("PER", 1, 1)}
    assert bio_spans(["I-ORG", "I-ORG"]) == {("ORG", 0, 1)}
    assert bio_spans(["O", "O"]) == set()


def test_entity_prf():
    gold = [["B-PER", "I-PER", "O", "B-LOC"]]

    assert entity_prf(gold, gold) == (1.0, 1.0, 1.0)

    p, r, f1 = entity_prf(gold, [["B-PER", "I-PER", "O", "O"]])
    assert (p, r) == (1.0, 0.5)
    assert abs(f1 - 2 / 3) < 1e-9

    # right boundaries, wrong type: one false positive and one false negative
    assert entity_prf([["B-PER"]], [["B-LOC"]]) == (0.0, 0.0, 0.0)

    assert entity_prf([["O"]], [["O"]]) == (1.0, 1.0, 1.0)
    assert entity_prf([["B-PER"]], [["O"]]) == (0.0, 0.0, 0.0)

    with pytest.raises(ConfigErrorInvalidValue):
        entity_prf(gold, [])
